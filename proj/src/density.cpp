#include "reanno/density.hpp"

#include <numbers>
#include <numeric>

namespace reanno {

DensityModel DensityModel::fit(const Datastore& store, double bandwidth) {
    std::vector<std::size_t> rows(store.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return fit(store, rows, bandwidth);
}

DensityModel DensityModel::fit(const Datastore& store, std::span<const std::size_t> rows, double bandwidth) {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ValidationError("KDE bandwidth must be positive");
    DensityModel m;
    m.h_ = bandwidth;
    m.dim_ = store.dim();
    const std::size_t n_classes = store.labels().size();
    std::vector<std::vector<std::size_t>> by_class(n_classes);
    for (auto r : rows) by_class.at(store.label(r)).push_back(r);
    m.members_.resize(n_classes);
    m.log_count_.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        auto& mat = m.members_[c];
        mat.resize(static_cast<Eigen::Index>(by_class[c].size()), static_cast<Eigen::Index>(m.dim_));
        for (std::size_t i = 0; i < by_class[c].size(); ++i)
            mat.row(static_cast<Eigen::Index>(i)) = store.vector(by_class[c][i]).cast<double>().transpose();
        m.log_count_[c] = by_class[c].empty() ? 0.0 : std::log(static_cast<double>(by_class[c].size()));
    }
    return m;
}

std::size_t DensityModel::class_count(LabelIndex c) const {
    if (c >= members_.size()) throw ValidationError("unknown class index " + std::to_string(c));
    return static_cast<std::size_t>(members_[c].rows());
}

double DensityModel::log_density_impl(LabelIndex c, const VectorXd& v) const {
    if (c >= members_.size()) throw ValidationError("unknown class index " + std::to_string(c));
    if (static_cast<std::size_t>(v.size()) != dim_)
        throw ValidationError("density query has dimension " + std::to_string(v.size()) + ", expected " +
                              std::to_string(dim_));
    const auto& mat = members_[c];
    if (mat.rows() == 0) return kNegInf;
    const VectorXd exponents = -(mat.rowwise() - v.transpose()).rowwise().squaredNorm() / (2.0 * h_ * h_);
    const double d = static_cast<double>(dim_);
    return log_sum_exp(exponents) - log_count_[c] - d * std::log(h_) - 0.5 * d * std::log(2.0 * std::numbers::pi) +
           log_offset_;
}

SoftLabel soft_label_from_log(const VectorXd& log_densities) {
    const double total = log_sum_exp(log_densities);
    if (!std::isfinite(total)) throw ValidationError("soft label undefined: every class is empty");
    SoftLabel out;
    out.probs = (log_densities.array() - total).unaryExpr([](double v) { return std::exp(v); });
    return out;
}

}  // namespace reanno

#pragma once

#include "reanno/common.hpp"
#include "reanno/datastore.hpp"

#include <span>
#include <vector>

namespace reanno {

/// Probability vector over the label space.
struct SoftLabel {
    VectorXd probs;
};

/// Normalises a vector of log densities with log-sum-exp; -inf entries map to 0.
SoftLabel soft_label_from_log(const VectorXd& log_densities);

/// Per-class Gaussian kernel density estimate with a shared bandwidth, evaluated
/// in log space:
///
///   log f_t(e) = logsumexp_i(-|e - e_i|^2 / (2 h^2)) - log|E_t| - D log h - (D/2) log(2 pi)
///
/// The normalising constant is the same for every class, so ratios between
/// classes (soft labels) and min-max rescaled scores do not depend on it.
class DensityModel {
public:
    DensityModel() = default;

    static DensityModel fit(const Datastore& store, double bandwidth);
    /// Fits on a subset of rows; classes come from the store's label space.
    static DensityModel fit(const Datastore& store, std::span<const std::size_t> rows, double bandwidth);

    double bandwidth() const { return h_; }
    std::size_t dim() const { return dim_; }
    std::size_t n_classes() const { return members_.size(); }
    std::size_t class_count(LabelIndex c) const;

    /// Adds a constant to every log density. Used to exercise invariance to the
    /// normalisation convention.
    void set_log_offset(double offset) { log_offset_ = offset; }
    double log_offset() const { return log_offset_; }

    /// Returns -inf for classes without members.
    template <typename Derived>
    double log_density(LabelIndex c, const Eigen::MatrixBase<Derived>& vector) const {
        const VectorXd v = vector.template cast<double>();
        return log_density_impl(c, v);
    }

    template <typename Derived>
    VectorXd log_densities(const Eigen::MatrixBase<Derived>& vector) const {
        const VectorXd v = vector.template cast<double>();
        VectorXd out(static_cast<Eigen::Index>(n_classes()));
        for (std::size_t c = 0; c < n_classes(); ++c) out(static_cast<Eigen::Index>(c)) = log_density_impl(static_cast<LabelIndex>(c), v);
        return out;
    }

    /// Normalised class densities; empty classes get exactly 0.
    template <typename Derived>
    SoftLabel soft_label(const Eigen::MatrixBase<Derived>& vector) const {
        return soft_label_from_log(log_densities(vector));
    }

private:
    double log_density_impl(LabelIndex c, const VectorXd& v) const;

    double h_ = 0.0;
    std::size_t dim_ = 0;
    std::vector<RowMatrix<double>> members_;
    std::vector<double> log_count_;
    double log_offset_ = 0.0;
};


}  // namespace reanno

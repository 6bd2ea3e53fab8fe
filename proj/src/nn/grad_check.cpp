#include "reanno/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace reanno::nn {

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
}

GradCheckReport grad_check(const LossBuilder& build, ParamSet& params, const GradCheckOptions& options) {
    struct Eval {
        double loss;
        std::vector<bool> signature;
    };
    auto evaluate = [&]() {
        Graph g(options.graph_seed, options.training);
        Var loss = build(g, params);
        if (loss.rows() != 1 || loss.cols() != 1) throw ValidationError("grad_check needs a scalar loss");
        return Eval{loss.value()(0, 0), g.relu_signature()};
    };

    params.zero_grad();
    std::vector<bool> base_signature;
    {
        Graph g(options.graph_seed, options.training);
        Var loss = build(g, params);
        g.backward(loss);
        base_signature = g.relu_signature();
    }

    GradCheckReport report;
    for (const auto& name : params.names()) {
        ParamCheck pc;
        pc.name = name;
        Tensor& value = params.value(name);
        const Tensor analytic = params.grad(name);
        for (Eigen::Index i = 0; i < value.size(); ++i) {
            const double original = value.data()[i];
            value.data()[i] = original + options.step;
            const Eval plus = evaluate();
            value.data()[i] = original - options.step;
            const Eval minus = evaluate();
            value.data()[i] = original;
            if (plus.signature != base_signature || minus.signature != base_signature) {
                ++pc.excluded;
                continue;
            }
            const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
            const double a = analytic.data()[i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
            pc.max_rel_error = std::max(pc.max_rel_error, err);
            ++pc.checked;
        }
        pc.passed = pc.max_rel_error <= options.tolerance;
        if (pc.excluded > 0)
            report.warnings.push_back(name + ": " + std::to_string(pc.excluded) +
                                      " entries excluded (perturbation crosses a ReLU kink)");
        if (!pc.passed)
            report.warnings.push_back(name + ": relative error " + std::to_string(pc.max_rel_error) +
                                      " exceeds tolerance");
        report.passed = report.passed && pc.passed;
        report.params.push_back(std::move(pc));
    }
    return report;
}

}  // namespace reanno::nn

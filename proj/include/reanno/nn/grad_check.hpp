#pragma once

#include "reanno/nn/graph.hpp"

#include <functional>
#include <string>
#include <vector>

namespace reanno::nn {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-6;
    /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
    double floor = 1e-4;
    std::uint64_t graph_seed = 0;
    bool training = false;
};

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;  ///< entries whose perturbation crossed a ReLU kink
    bool passed = true;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    std::vector<std::string> warnings;
    bool passed = true;

    double max_rel_error() const;
};

/// Builds the loss on a fresh Graph each evaluation.
using LossBuilder = std::function<Var(Graph&, ParamSet&)>;

/// Compares reverse-mode gradients with central finite differences for every
/// entry of every parameter. Entries whose +/- perturbation changes any ReLU
/// sign pattern are excluded and reported as warnings.
GradCheckReport grad_check(const LossBuilder& build, ParamSet& params, const GradCheckOptions& options = {});

}  // namespace reanno::nn

#pragma once

#include "reanno/nn/graph.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace reanno::nn {

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    AdamWConfig config;
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;
    std::uint64_t step = 0;
    bool initialized = false;

    /// Zero moments shaped like every parameter.
    static OptimizerState init(const ParamSet& params, AdamWConfig config);
};

/// Decoupled weight decay (p <- p - lr * wd * p) followed by the bias-corrected
/// Adam update. Uses state.config.lr as the current learning rate.
void adamw_step(ParamSet& params, OptimizerState& state);

/// Linear warm-up over the first `warmup_steps`, then constant.
double warmup_lr(double base_lr, std::uint64_t step, std::uint64_t warmup_steps);

}  // namespace reanno::nn

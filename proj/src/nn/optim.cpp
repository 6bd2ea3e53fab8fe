#include "reanno/nn/optim.hpp"

#include <cmath>

namespace reanno::nn {

OptimizerState OptimizerState::init(const ParamSet& params, AdamWConfig config) {
    OptimizerState s;
    s.config = config;
    for (const auto& name : params.names()) {
        const auto& v = params.value(name);
        s.first_moment.emplace(name, Tensor::Zero(v.rows(), v.cols()));
        s.second_moment.emplace(name, Tensor::Zero(v.rows(), v.cols()));
    }
    s.initialized = true;
    return s;
}

void adamw_step(ParamSet& params, OptimizerState& state) {
    if (!state.initialized) throw ValidationError("AdamW state used before initialisation");
    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(c.beta1, t);
    const double correct2 = 1.0 - std::pow(c.beta2, t);
    for (const auto& name : params.names()) {
        auto m = state.first_moment.find(name);
        auto v = state.second_moment.find(name);
        if (m == state.first_moment.end() || v == state.second_moment.end())
            throw ValidationError("AdamW state has no moments for parameter '" + name + "'");
        Tensor& p = params.value(name);
        const Tensor& g = params.grad(name);
        if (c.weight_decay != 0.0) p -= c.lr * c.weight_decay * p;
        m->second = c.beta1 * m->second + (1.0 - c.beta1) * g;
        v->second = c.beta2 * v->second + (1.0 - c.beta2) * g.cwiseProduct(g);
        p.array() -= c.lr * (m->second.array() / correct1) / ((v->second.array() / correct2).sqrt() + c.eps);
    }
}

double warmup_lr(double base_lr, std::uint64_t step, std::uint64_t warmup_steps) {
    if (warmup_steps == 0 || step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

}  // namespace reanno::nn

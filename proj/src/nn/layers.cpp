#include "reanno/nn/layers.hpp"

#include <cmath>

namespace reanno::nn {

void init_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng, bool bias) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    Tensor w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * rng.uniform() - 1.0) * limit;
    params.add(prefix + ".W", std::move(w));
    if (bias) params.add(prefix + ".b", Tensor::Zero(1, static_cast<Eigen::Index>(out)));
}

Var linear(Graph& g, ParamSet& params, const std::string& prefix, Var x) {
    Var y = matmul(x, g.param(params, prefix + ".W"));
    if (params.contains(prefix + ".b")) y = add(y, g.param(params, prefix + ".b"));
    return y;
}

Tensor sincos_positions(std::size_t length, std::size_t d) {
    if (d == 0 || d % 2 != 0) throw ValidationError("positional encoding dimension must be even");
    Tensor g(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(d));
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t k = 0; k < d / 2; ++k) {
            const double omega = 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(d));
            const double angle = omega * static_cast<double>(pos);
            g(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(2 * k)) = std::sin(angle);
            g(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(2 * k + 1)) = std::cos(angle);
        }
    }
    return g;
}

void EncoderBlockConfig::validate() const {
    if (dim == 0 || heads == 0) throw ValidationError("encoder dim and heads must be positive");
    if (dim % heads != 0)
        throw ValidationError("model dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("encoder dropout must lie in [0, 1)");
}

void init_encoder_block(ParamSet& params, const std::string& prefix, const EncoderBlockConfig& cfg, Rng& rng) {
    cfg.validate();
    for (const char* name : {".q", ".k", ".v", ".o"}) init_linear(params, prefix + name, cfg.dim, cfg.dim, rng);
    init_linear(params, prefix + ".ff1", cfg.dim, cfg.ff(), rng);
    init_linear(params, prefix + ".ff2", cfg.ff(), cfg.dim, rng);
    for (const char* name : {".ln1", ".ln2"}) {
        params.add(prefix + name + ".gain", Tensor::Ones(1, static_cast<Eigen::Index>(cfg.dim)));
        params.add(prefix + name + ".bias", Tensor::Zero(1, static_cast<Eigen::Index>(cfg.dim)));
    }
}

Var attention_encoder_block(Graph& g, ParamSet& params, const std::string& prefix, Var x,
                            const EncoderBlockConfig& cfg, AttentionTrace* trace) {
    cfg.validate();
    if (static_cast<std::size_t>(x.cols()) != cfg.dim)
        throw ValidationError("encoder input width " + std::to_string(x.cols()) + " != model dim " +
                              std::to_string(cfg.dim));
    const auto dk = static_cast<Eigen::Index>(cfg.dim / cfg.heads);
    Var q = linear(g, params, prefix + ".q", x);
    Var k = linear(g, params, prefix + ".k", x);
    Var v = linear(g, params, prefix + ".v", x);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Var> heads;
    if (trace) trace->weights.clear();
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const auto off = static_cast<Eigen::Index>(h) * dk;
        Var qh = slice_cols(q, off, dk);
        Var kh = slice_cols(k, off, dk);
        Var vh = slice_cols(v, off, dk);
        Var weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        if (trace) trace->weights.push_back(weights.value());
        heads.push_back(matmul(weights, vh));
    }
    Var attn = linear(g, params, prefix + ".o", concat_cols(heads));
    Var h1 = layer_norm(add(x, dropout(attn, cfg.dropout)), g.param(params, prefix + ".ln1.gain"),
                        g.param(params, prefix + ".ln1.bias"));
    Var ff = linear(g, params, prefix + ".ff2", relu(linear(g, params, prefix + ".ff1", h1)));
    return layer_norm(add(h1, dropout(ff, cfg.dropout)), g.param(params, prefix + ".ln2.gain"),
                      g.param(params, prefix + ".ln2.bias"));
}

}  // namespace reanno::nn

#pragma once

#include "reanno/nn/graph.hpp"

#include <string>
#include <vector>

namespace reanno::nn {

/// Seeded uniform fan-in initialisation, U(-sqrt(6/in), sqrt(6/in)); zero bias.
/// Registers `<prefix>.W` (in x out) and, when `bias`, `<prefix>.b` (1 x out).
void init_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                 bool bias = true);

/// x W + b, with the bias term skipped when `<prefix>.b` is not registered.
Var linear(Graph& g, ParamSet& params, const std::string& prefix, Var x);

/// g[pos, 2k] = sin(pos * w_k), g[pos, 2k+1] = cos(pos * w_k), w_k = 10000^(-2k/d).
Tensor sincos_positions(std::size_t length, std::size_t d);

struct EncoderBlockConfig {
    std::size_t dim = 0;
    std::size_t heads = 8;
    std::size_t ff_dim = 0;  ///< 0 means 4 * dim
    double dropout = 0.1;

    std::size_t ff() const { return ff_dim == 0 ? 4 * dim : ff_dim; }
    void validate() const;
};

/// Attention weights of the last forward pass, one L x L matrix per head.
struct AttentionTrace {
    std::vector<Tensor> weights;
};

void init_encoder_block(ParamSet& params, const std::string& prefix, const EncoderBlockConfig& cfg, Rng& rng);

/// Post-norm Transformer encoder block:
///   h = LayerNorm(x + Dropout(MultiHead(x)))
///   y = LayerNorm(h + Dropout(FFN(h))),  FFN(h) = ReLU(h W1 + b1) W2 + b2
Var attention_encoder_block(Graph& g, ParamSet& params, const std::string& prefix, Var x,
                            const EncoderBlockConfig& cfg, AttentionTrace* trace = nullptr);

}  // namespace reanno::nn

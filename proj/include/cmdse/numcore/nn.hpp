#pragma once

#include <string>

#include "cmdse/numcore/ops.hpp"
#include "cmdse/numcore/optim.hpp"
#include "cmdse/numcore/random.hpp"

namespace cmdse::num {

enum class Init { xavier, gaussian, zeros };

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear make(std::size_t in, std::size_t out, Rng& rng, Init init, double stddev,
                       bool trainable);
    Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
    std::size_t in_features() const { return weight.shape()[0]; }
    std::size_t out_features() const { return weight.shape()[1]; }
    void collect(ParamList& out, const std::string& prefix) const;
};

struct AffineLayerNorm {
    Tensor gamma;
    Tensor beta;

    static AffineLayerNorm make(std::size_t width, bool trainable);
    Tensor operator()(const Tensor& x) const { return add(mul(layer_norm(x), gamma), beta); }
    void collect(ParamList& out, const std::string& prefix) const;
};

// Scaled dot-product attention with `heads` column groups.
struct MultiHeadAttention {
    Linear q, k, v, o;
    std::size_t heads = 1;

    static MultiHeadAttention make(std::size_t width, std::size_t heads, Rng& rng, Init init,
                                   double stddev, bool trainable);
    // queries [Mq, C], keys [Mk, C], values [Mk, C] -> [Mq, C]
    Tensor operator()(const Tensor& queries, const Tensor& keys, const Tensor& values) const;
    void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace cmdse::num

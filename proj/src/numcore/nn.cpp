#include "cmdse/numcore/nn.hpp"

#include <cmath>

namespace cmdse::num {

Linear Linear::make(std::size_t in, std::size_t out, Rng& rng, Init init, double stddev, bool trainable) {
    Linear l;
    switch (init) {
        case Init::xavier: {
            const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
            l.weight = rand_uniform({in, out}, rng, -bound, bound, trainable);
            break;
        }
        case Init::gaussian:
            l.weight = randn({in, out}, rng, stddev, trainable);
            break;
        case Init::zeros:
            l.weight = Tensor::zeros({in, out}, trainable);
            break;
    }
    l.bias = Tensor::zeros({out}, trainable);
    return l;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

AffineLayerNorm AffineLayerNorm::make(std::size_t width, bool trainable) {
    return {Tensor::full({width}, 1.0, trainable), Tensor::zeros({width}, trainable)};
}

void AffineLayerNorm::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

MultiHeadAttention MultiHeadAttention::make(std::size_t width, std::size_t heads, Rng& rng, Init init,
                                            double stddev, bool trainable) {
    if (heads == 0 || width % heads != 0) {
        throw ShapeError("attention width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    MultiHeadAttention a;
    a.q = Linear::make(width, width, rng, init, stddev, trainable);
    a.k = Linear::make(width, width, rng, init, stddev, trainable);
    a.v = Linear::make(width, width, rng, init, stddev, trainable);
    a.o = Linear::make(width, width, rng, init, stddev, trainable);
    a.heads = heads;
    return a;
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys, const Tensor& values) const {
    const Tensor qp = q(queries), kp = k(keys), vp = v(values);
    const std::size_t width = qp.shape()[1];
    const std::size_t hd = width / heads;
    const double temperature = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor qh = heads == 1 ? qp : slice(qp, 1, h * hd, hd);
        const Tensor kh = heads == 1 ? kp : slice(kp, 1, h * hd, hd);
        const Tensor vh = heads == 1 ? vp : slice(vp, 1, h * hd, hd);
        const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), temperature), 1);
        outs.push_back(matmul(weights, vh));
    }
    return o(heads == 1 ? outs.front() : concat(outs, 1));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    o.collect(out, prefix + ".o");
}

}  // namespace cmdse::num

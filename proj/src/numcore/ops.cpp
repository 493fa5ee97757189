#include "cmdse/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cmdse::num {

namespace {

void accumulate_if(Node& parent, std::size_t i, double g) {
    if (parent.requires_grad) parent.ensure_grad()[i] += g;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return a.shape();
    if (is_suffix(b.shape(), a.shape())) return a.shape();
    if (is_suffix(a.shape(), b.shape())) return b.shape();
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

// dfa/dfb receive (a_i, b_i, out_i) and return the local partial derivative.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA dfa, DB dfb) {
    Shape shape = broadcast_shape(a, b, op);
    const std::size_t n = numel_of(shape);
    const std::size_t na = a.numel(), nb = b.numel();
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(n);
    if (na == n && nb == n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    } else if (na == n) {
        for (std::size_t base = 0; base < n; base += nb)
            for (std::size_t j = 0; j < nb; ++j) out[base + j] = f(av[base + j], bv[j]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
    }
    return make_result(std::move(shape), std::move(out), op, {a, b}, [dfa, dfb](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t na = pa.data.size(), nb = pb.data.size();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            const double g = self.grad[i];
            const double x = pa.data[i % na], y = pb.data[i % nb];
            accumulate_if(pa, i % na, g * dfa(x, y, self.data[i]));
            accumulate_if(pb, i % nb, g * dfb(x, y, self.data[i]));
        }
    });
}

// df receives (x_i, out_i).
template <class F, class D>
Tensor unary(const Tensor& x, const char* op, F f, D df) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_result(x.shape(), std::move(out), op, {x}, [df](Node& self) {
        Node& px = *self.parents[0];
        auto& g = px.ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            g[i] += self.grad[i] * df(px.data[i], self.data[i]);
        }
    });
}

struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

double sigmoid_value(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
        [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor neg(const Tensor& x) {
    return unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, "scale", [factor](double v) { return v * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(
        x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

// log(sigmoid(x)) = -softplus(-x), evaluated without overflow.
Tensor log_sigmoid(const Tensor& x) {
    return unary(
        x, "log_sigmoid",
        [](double v) { return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); },
        [](double v, double) { return 1.0 - sigmoid_value(v); });
}

Tensor gelu(const Tensor& x) {
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, "abs", [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor power(const Tensor& x, double exponent) {
    return unary(
        x, "power", [exponent](double v) { return std::pow(v, exponent); },
        [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(m * n, 0.0);
    // Four rows of b per pass keep each output row in registers longer.
    const std::size_t k4 = k - k % 4;
    for (std::size_t i = 0; i < m; ++i) {
        double* __restrict row = out.data() + i * n;
        const double* arow = av.data() + i * k;
        std::size_t p = 0;
        for (; p < k4; p += 4) {
            const double s0 = arow[p], s1 = arow[p + 1], s2 = arow[p + 2], s3 = arow[p + 3];
            const double* __restrict b0 = bv.data() + p * n;
            const double* __restrict b1 = b0 + n;
            const double* __restrict b2 = b1 + n;
            const double* __restrict b3 = b2 + n;
            for (std::size_t j = 0; j < n; ++j) row[j] += (s0 * b0[j] + s1 * b1[j]) + (s2 * b2[j] + s3 * b3[j]);
        }
        for (; p < k; ++p) {
            const double s = arow[p];
            const double* __restrict brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
        }
    }
    return make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            auto& ga = pa.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = g.data() + i * n;
                    const double* brow = pb.data.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
            }
        }
        if (pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double s = pa.data[i * k + p];
                    if (s == 0.0) continue;
                    double* gbrow = gb.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& x) {
    if (x.dim() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(x.shape()));
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    const auto& xv = x.values();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    return make_result({c, r}, std::move(out), "transpose", {x}, [r, c](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return make_result(std::move(shape), x.values(), "reshape", {x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    AxisSplit base = split_axis(first, axis, "concat");
    std::size_t total = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = first;
        if (a.size() != b.size()) {
            throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(p.shape()));
        }
        a[axis] = b[axis] = 0;
        if (a != b) {
            throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(p.shape()));
        }
        extents.push_back(p.shape()[axis]);
        total += p.shape()[axis];
    }
    Shape shape = first;
    shape[axis] = total;
    std::vector<double> out(numel_of(shape));
    const std::size_t outer = base.outer, inner = base.inner;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = parts[k].values();
        const std::size_t e = extents[k];
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.data() + o * e * inner, e * inner, out.data() + (o * total + offset) * inner);
        }
        offset += e;
    }
    return make_result(std::move(shape), std::move(out), "concat", parts,
                       [extents, outer, inner, total](Node& self) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < extents.size(); ++k) {
                               Node& p = *self.parents[k];
                               const std::size_t e = extents[k];
                               if (p.requires_grad) {
                                   auto& g = p.ensure_grad();
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < e * inner; ++i)
                                           g[o * e * inner + i] += self.grad[(o * total + offset) * inner + i];
                               }
                               offset += e;
                           }
                       });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    AxisSplit s = split_axis(x.shape(), axis, "slice");
    if (start + length > s.extent) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis " + std::to_string(axis) + " of shape " + shape_str(x.shape()));
    }
    Shape shape = x.shape();
    shape[axis] = length;
    std::vector<double> out(numel_of(shape));
    const auto& xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(xv.data() + (o * s.extent + start) * s.inner, length * s.inner,
                    out.data() + o * length * s.inner);
    }
    return make_result(std::move(shape), std::move(out), "slice", {x}, [s, start, length](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < length * s.inner; ++i)
                g[(o * s.extent + start) * s.inner + i] += self.grad[o * length * s.inner + i];
    });
}

Tensor index_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    if (x.dim() == 0) throw ShapeError("index_rows: scalar input");
    const std::size_t n = x.shape()[0];
    const std::size_t width = n == 0 ? 0 : x.numel() / n;
    for (auto r : rows) {
        if (r >= n) {
            throw ShapeError("index_rows: row " + std::to_string(r) + " out of range for shape " +
                             shape_str(x.shape()));
        }
    }
    Shape shape = x.shape();
    shape[0] = rows.size();
    std::vector<double> out(rows.size() * width);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(xv.data() + rows[i] * width, width, out.data() + i * width);
    return make_result(std::move(shape), std::move(out), "index_rows", {x}, [rows, width](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < width; ++j) g[rows[i] * width + j] += self.grad[i * width + j];
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return make_result({}, {acc}, "sum", {x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor sum(const Tensor& x, std::size_t axis) {
    AxisSplit s = split_axis(x.shape(), axis, "sum");
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(s.outer * s.inner, 0.0);
    const auto& xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
            for (std::size_t i = 0; i < s.inner; ++i)
                out[o * s.inner + i] += xv[(o * s.extent + k) * s.inner + i];
    return make_result(std::move(shape), std::move(out), "sum_axis", {x}, [s](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t k = 0; k < s.extent; ++k)
                for (std::size_t i = 0; i < s.inner; ++i)
                    g[(o * s.extent + k) * s.inner + i] += self.grad[o * s.inner + i];
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, std::size_t axis) {
    AxisSplit s = split_axis(x.shape(), axis, "mean");
    if (s.extent == 0) throw ShapeError("mean over empty axis");
    return scale(sum(x, axis), 1.0 / static_cast<double>(s.extent));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    AxisSplit s = split_axis(x.shape(), axis, "softmax");
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            auto idx = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
            double mx = -INFINITY;
            for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xv[idx(k)]);
            double z = 0.0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                out[idx(k)] = std::exp(xv[idx(k)] - mx);
                z += out[idx(k)];
            }
            for (std::size_t k = 0; k < s.extent; ++k) out[idx(k)] /= z;
        }
    }
    return make_result(x.shape(), std::move(out), "softmax", {x}, [s](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& y = self.data;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                auto idx = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
                double dot = 0.0;
                for (std::size_t k = 0; k < s.extent; ++k) dot += self.grad[idx(k)] * y[idx(k)];
                for (std::size_t k = 0; k < s.extent; ++k) g[idx(k)] += y[idx(k)] * (self.grad[idx(k)] - dot);
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, double eps) {
    if (x.dim() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (row[j] - mu) * inv_std[r];
    }
    return make_result(x.shape(), std::move(out), "layer_norm", {x},
                       [d, rows, inv_std = std::move(inv_std)](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           const auto& y = self.data;
                           for (std::size_t r = 0; r < rows; ++r) {
                               double mg = 0.0, mgy = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   mg += self.grad[r * d + j];
                                   mgy += self.grad[r * d + j] * y[r * d + j];
                               }
                               mg /= static_cast<double>(d);
                               mgy /= static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j) {
                                   g[r * d + j] += inv_std[r] * (self.grad[r * d + j] - mg - y[r * d + j] * mgy);
                               }
                           }
                       });
}

Tensor l2_normalize(const Tensor& x, double eps) {
    if (x.dim() == 0) throw ShapeError("l2_normalize: scalar input");
    const std::size_t d = x.shape().back();
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
        norms[r] = std::sqrt(ss + eps);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / norms[r];
    }
    return make_result(x.shape(), std::move(out), "l2_normalize", {x},
                       [d, rows, norms = std::move(norms)](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           const auto& y = self.data;
                           for (std::size_t r = 0; r < rows; ++r) {
                               double dot = 0.0;
                               for (std::size_t j = 0; j < d; ++j) dot += self.grad[r * d + j] * y[r * d + j];
                               for (std::size_t j = 0; j < d; ++j)
                                   g[r * d + j] += (self.grad[r * d + j] - y[r * d + j] * dot) / norms[r];
                           }
                       });
}

}  // namespace cmdse::num

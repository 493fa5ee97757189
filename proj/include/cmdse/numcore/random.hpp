#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "cmdse/numcore/tensor.hpp"

namespace cmdse::num {

// Seeded stream with distribution code kept in-house so values are identical
// across standard libraries (std::normal_distribution is not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    // Independent stream derived from a key path, e.g. {seed, split, index}.
    explicit Rng(std::initializer_list<std::uint64_t> key);

    double uniform();  // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    std::uint64_t below(std::uint64_t n);  // [0, n)
    std::uint64_t next() { return engine_(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

}  // namespace cmdse::num

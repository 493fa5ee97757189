#pragma once

// Central finite-difference oracle. Independent of the tape: it only perturbs
// parameter storage and re-evaluates the scalar objective without recording.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cmdse/numcore/tensor.hpp"

namespace cmdse::testing {

inline double relative_error(double analytic, double numeric, double floor) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

// d objective / d param[index] by central difference with step h.
inline double numeric_partial(num::Tensor& param, std::size_t index, const std::function<double()>& objective,
                              double h = 1e-5) {
    num::NoGradGuard guard;
    auto data = param.mutable_data();
    const double saved = data[index];
    data[index] = saved + h;
    const double up = objective();
    data[index] = saved - h;
    const double down = objective();
    data[index] = saved;
    return (up - down) / (2.0 * h);
}

// Directional derivative along `direction` (same size as param).
inline double numeric_directional(num::Tensor& param, const std::vector<double>& direction,
                                  const std::function<double()>& objective, double h = 1e-5) {
    num::NoGradGuard guard;
    auto data = param.mutable_data();
    std::vector<double> saved(data.begin(), data.end());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = saved[i] + h * direction[i];
    const double up = objective();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = saved[i] - h * direction[i];
    const double down = objective();
    std::copy(saved.begin(), saved.end(), data.begin());
    return (up - down) / (2.0 * h);
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Location and values of the worst element, for diagnostics.
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Compares every element of each param's analytic grad against the oracle.
// `objective` must rebuild the graph from the current param values.
inline GradCheckResult check_all_elements(std::vector<num::Tensor> params,
                                          const std::function<num::Tensor()>& objective,
                                          double floor = 1e-6, double h = 1e-5) {
    for (auto& p : params) p.zero_grad();
    num::Tensor loss = objective();
    num::backward(loss);
    GradCheckResult r;
    auto scalar = [&] { return objective().item(); };
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double n = numeric_partial(p, i, scalar, h);
            const double e = relative_error(analytic[i], n, floor);
            if (e > r.max_rel_error) r = {e, r.checked, k, i, analytic[i], n};
            ++r.checked;
        }
    }
    return r;
}

}  // namespace cmdse::testing

#pragma once

#include <string>
#include <vector>

#include "cmdse/numcore/tensor.hpp"

namespace cmdse::num {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Adam with decoupled weight decay: the decay shrinks the parameter directly
// and never enters the moment estimates.
class AdamW {
public:
    AdamW(ParamList params, AdamWConfig config);

    // Throws if a tracked parameter has no grad.
    void step();
    void zero_grad();

    const ParamList& params() const { return params_; }
    const AdamWConfig& config() const { return config_; }
    long long steps_taken() const { return t_; }

    // Moment buffers, in parameter order, for checkpointing.
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void restore(long long t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

private:
    ParamList params_;
    AdamWConfig config_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// One stateless step from zero moments; convenience for single-shot updates.
void adamw_step(ParamList& params, double lr, std::pair<double, double> betas, double weight_decay);

}  // namespace cmdse::num

#include "cmdse/numcore/optim.hpp"

#include <cmath>

namespace cmdse::num {

AdamW::AdamW(ParamList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void AdamW::step() {
    for (const auto& p : params_) {
        if (p.tensor.requires_grad() && !p.tensor.has_grad()) {
            throw Error("adamw: parameter '" + p.name + "' is tracked but has no grad");
        }
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& w = params_[k].tensor;
        if (!w.requires_grad()) continue;
        auto data = w.mutable_data();
        auto grad = w.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            data[i] -= config_.lr * config_.weight_decay * data[i];
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            data[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void AdamW::restore(long long t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
        throw ShapeError("adamw restore: moment count does not match parameter count");
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (m[k].size() != params_[k].tensor.numel() || v[k].size() != params_[k].tensor.numel()) {
            throw ShapeError("adamw restore: moment size mismatch for '" + params_[k].name + "'");
        }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

void adamw_step(ParamList& params, double lr, std::pair<double, double> betas, double weight_decay) {
    AdamWConfig cfg;
    cfg.lr = lr;
    cfg.beta1 = betas.first;
    cfg.beta2 = betas.second;
    cfg.weight_decay = weight_decay;
    AdamW opt(params, cfg);
    opt.step();
}

}  // namespace cmdse::num

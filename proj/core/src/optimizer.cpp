#include "smetod/optimizer.hpp"

#include <cmath>

namespace smetod {

void AdamOptimizer::step(std::span<const std::pair<std::string, Tensor>> params) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (const auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        Tensor param = p;
        auto vals = param.mutable_values();
        auto grads = p.grad();
        auto& mom = state_[p.impl().get()];
        if (mom.m.size() != vals.size()) {
            mom.m.assign(vals.size(), 0.0);
            mom.v.assign(vals.size(), 0.0);
        }
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double g = grads[i];
            mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g;
            mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            vals[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                                     config_.weight_decay * vals[i]);
        }
    }
}

double AdamOptimizer::grad_norm(std::span<const std::pair<std::string, Tensor>> params) {
    double acc = 0.0;
    for (const auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) acc += g * g;
    }
    return std::sqrt(acc);
}

void AdamOptimizer::zero_grad(std::span<const std::pair<std::string, Tensor>> params) {
    for (const auto& [name, p] : params) {
        Tensor param = p;
        param.zero_grad();
    }
}

} // namespace smetod

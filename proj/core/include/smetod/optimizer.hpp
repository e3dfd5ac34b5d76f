#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "smetod/tensor.hpp"

namespace smetod {

// Adaptive moment estimation with decoupled weight decay (decay 0 by default).
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig config = {}) : config_(config) {}

    const AdamConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }

    // One update over the given parameters using their accumulated grads.
    // Parameters with no grad buffer are skipped.
    void step(std::span<const std::pair<std::string, Tensor>> params);

    // L2 norm over every accumulated grad, for divergence diagnostics.
    static double grad_norm(std::span<const std::pair<std::string, Tensor>> params);

    void zero_grad(std::span<const std::pair<std::string, Tensor>> params);

    std::int64_t step_count() const { return steps_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig config_;
    std::unordered_map<const detail::Storage*, Moments> state_;
    std::int64_t steps_ = 0;
};

} // namespace smetod

#include "smetod/init_transfer.hpp"

#include <cmath>
#include <stdexcept>

#include "smetod/rng.hpp"

namespace smetod {

UpcycledExperts upcycle_experts(const DenseFFNSnapshot& snapshot, int num_experts) {
    if (num_experts < 1)
        throw std::invalid_argument("upcycle_experts: num_experts must be >= 1");
    if (snapshot.w2.rank() != 2 || snapshot.b2.rank() != 1 ||
        snapshot.w2.dim(1) != snapshot.b2.dim(0))
        throw std::invalid_argument("upcycle_experts: donor shapes " +
                                    shape_to_string(snapshot.w2.shape()) + " and " +
                                    shape_to_string(snapshot.b2.shape()) + " do not line up");
    UpcycledExperts out;
    for (int e = 0; e < num_experts; ++e) {
        out.weights.push_back(snapshot.w2.clone().set_requires_grad(true));
        out.biases.push_back(snapshot.b2.clone().set_requires_grad(true));
    }
    return out;
}

Tensor kaiming_uniform(std::int64_t fan_in, std::int64_t fan_out, std::uint64_t rng_seed) {
    if (fan_in < 1 || fan_out < 1)
        throw std::invalid_argument("kaiming_uniform: dimensions must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t = Tensor::zeros({fan_in, fan_out});
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double u = static_cast<double>(CounterRng::hash_at(rng_seed, i) >> 11) * 0x1.0p-53;
        vals[i] = bound * (2.0 * u - 1.0);
    }
    return t;
}

Tensor kaiming_init_phi(int d_ff, int num_slots, std::uint64_t rng_seed) {
    return kaiming_uniform(d_ff, num_slots, rng_seed);
}

} // namespace smetod

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "smetod/soft_moe.hpp"
#include "smetod/tensor.hpp"

namespace smetod {

// Second feed-forward map of a dense encoder block, used as the donor when
// expert weights are seeded from a pre-trained dense model.
struct DenseFFNSnapshot {
    Tensor w2;              // [d_ff x d_model]
    Tensor b2;              // [d_model]
    std::string source_tag; // checkpoint path or "random-pretrain"
};

struct UpcycledExperts {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
};

// Replicates the donor map into `num_experts` independently owned copies.
UpcycledExperts upcycle_experts(const DenseFFNSnapshot& snapshot, int num_experts);

// Kaiming-uniform combination weights: i.i.d. uniform on [-b, b] with
// b = sqrt(6 / d_ff). Pure function of (d_ff, num_slots, seed).
Tensor kaiming_init_phi(int d_ff, int num_slots, std::uint64_t rng_seed);

// Kaiming-uniform for a general [fan_in x fan_out] map (fan-in bound).
Tensor kaiming_uniform(std::int64_t fan_in, std::int64_t fan_out, std::uint64_t rng_seed);

} // namespace smetod

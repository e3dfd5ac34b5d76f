#pragma once

#include <cstdint>
#include <vector>

#include "smetod/tensor.hpp"

namespace smetod {

// Soft mixture-of-experts layer: every token is softly dispatched to every
// slot, each expert transforms its block of slots, and tokens recombine the
// slot outputs. No discrete routing anywhere, so the whole layer is
// differentiable.
struct SoftMoEConfig {
    int num_experts = 1;     // m
    int slots_per_expert = 1; // p
    int d_ff = 1;             // input feature width
    int d_model = 1;          // output width
    bool masked_softmax = true; // exclude padding tokens from the dispatch softmax

    int total_slots() const { return num_experts * slots_per_expert; }
    void validate() const;
};

inline constexpr int kMaxTotalSlots = 4096;

struct SoftMoEParams {
    SoftMoEConfig config;
    Tensor phi;                        // [d_ff x (m*p)], column j belongs to slot j
    std::vector<Tensor> expert_weights; // m tensors [d_ff x d_model]
    std::vector<Tensor> expert_biases;  // m tensors [d_model]

    static SoftMoEParams zeros(const SoftMoEConfig& config);
    std::int64_t parameter_count() const;
    static std::int64_t parameter_count(const SoftMoEConfig& config);
    void validate() const;
};

// 1-based slot index -> 1-based expert index; slots [1..p] belong to expert 1,
// [p+1..2p] to expert 2, and so on.
int slot_index_to_expert(int slot_index, int slots_per_expert, int total_slots);

struct DispatchResult {
    Tensor weights;     // D [l x (m*p)], each column sums to 1 over tokens
    Tensor slot_inputs; // x~ [(m*p) x d_ff]
};

// token_mask: 1 for real tokens, 0 for padding; empty = all real. Masked
// tokens are excluded from the per-slot softmax when masked_softmax is on.
DispatchResult dispatch(const Tensor& x, const Tensor& phi, std::span<const double> token_mask,
                        bool masked_softmax);

Tensor apply_experts(const Tensor& slot_inputs, const SoftMoEParams& params);

// Per-token convex combination of slot outputs. Rows for masked tokens are
// still computed; callers treat them as padding.
Tensor combine(const Tensor& x, const Tensor& phi, const Tensor& slot_outputs);

Tensor soft_moe_forward(const Tensor& x, const SoftMoEParams& params,
                        std::span<const double> token_mask = {});

} // namespace smetod

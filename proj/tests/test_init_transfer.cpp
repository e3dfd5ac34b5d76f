#include "smetod/init_transfer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "smetod/rng.hpp"

using namespace smetod;

namespace {

DenseFFNSnapshot random_snapshot(int d_ff, int d, std::uint64_t seed) {
    DenseFFNSnapshot s;
    s.w2 = kaiming_uniform(d_ff, d, seed);
    CounterRng rng(seed + 1);
    s.b2 = Tensor::zeros({d});
    for (auto& v : s.b2.mutable_values()) v = rng.uniform(-0.1, 0.1);
    s.source_tag = "random-pretrain";
    return s;
}

} // namespace

TEST(Upcycle, single_expert_equals_snapshot) {
    const auto snap = random_snapshot(4, 3, 5);
    const auto experts = upcycle_experts(snap, 1);
    ASSERT_EQ(experts.weights.size(), 1u);
    EXPECT_EQ(std::memcmp(experts.weights[0].values().data(), snap.w2.values().data(),
                          sizeof(double) * static_cast<std::size_t>(snap.w2.numel())),
              0);
    EXPECT_EQ(std::memcmp(experts.biases[0].values().data(), snap.b2.values().data(),
                          sizeof(double) * static_cast<std::size_t>(snap.b2.numel())),
              0);
}

TEST(Upcycle, eight_bitwise_copies_independently_owned) {
    const auto snap = random_snapshot(6, 4, 9);
    auto experts = upcycle_experts(snap, 8);
    ASSERT_EQ(experts.weights.size(), 8u);
    for (int e = 0; e < 8; ++e) {
        EXPECT_EQ(std::memcmp(experts.weights[static_cast<std::size_t>(e)].values().data(),
                              snap.w2.values().data(),
                              sizeof(double) * static_cast<std::size_t>(snap.w2.numel())),
                  0);
        EXPECT_TRUE(experts.weights[static_cast<std::size_t>(e)].requires_grad());
    }
    // mutating expert 3 leaves the others unchanged
    experts.weights[3].mutable_values()[0] = 123.0;
    for (int e = 0; e < 8; ++e) {
        if (e == 3) continue;
        EXPECT_EQ(experts.weights[static_cast<std::size_t>(e)].values()[0], snap.w2.values()[0]);
    }
}

TEST(Upcycle, invalid_inputs) {
    const auto snap = random_snapshot(4, 3, 5);
    EXPECT_THROW(upcycle_experts(snap, 0), std::invalid_argument);
    DenseFFNSnapshot bad = snap;
    bad.b2 = Tensor::zeros({7});
    EXPECT_THROW(upcycle_experts(bad, 2), std::invalid_argument);
}

TEST(Upcycle, slot_swap_invariance_with_upcycled_experts) {
    const auto snap = random_snapshot(3, 2, 77);
    SoftMoEConfig c{.num_experts = 3, .slots_per_expert = 2, .d_ff = 3, .d_model = 2};
    SoftMoEParams p = SoftMoEParams::zeros(c);
    auto experts = upcycle_experts(snap, 3);
    p.expert_weights = experts.weights;
    p.expert_biases = experts.biases;
    p.phi = kaiming_init_phi(3, 6, 123).set_requires_grad(true);

    CounterRng rng(31);
    Tensor x = Tensor::zeros({4, 3});
    for (auto& v : x.mutable_values()) v = rng.uniform(-1, 1);
    Tensor y = soft_moe_forward(x, p);

    SoftMoEParams q = p;
    q.phi = p.phi.clone();
    for (std::int64_t k = 0; k < 3; ++k) {
        std::swap(q.phi.ref(k, 0), q.phi.ref(k, 5)); // slots of different experts
    }
    Tensor y2 = soft_moe_forward(x, q);
    for (std::size_t i = 0; i < y.values().size(); ++i)
        EXPECT_NEAR(y2.values()[i], y.values()[i], 1e-12);
}

TEST(Upcycle, expert_permutation_with_phi_block_permutation_is_invariant) {
    const auto snap = random_snapshot(3, 2, 88);
    SoftMoEConfig c{.num_experts = 3, .slots_per_expert = 2, .d_ff = 3, .d_model = 2};
    SoftMoEParams p = SoftMoEParams::zeros(c);
    auto experts = upcycle_experts(snap, 3);
    p.expert_weights = experts.weights;
    p.expert_biases = experts.biases;
    p.phi = kaiming_init_phi(3, 6, 55).set_requires_grad(true);

    CounterRng rng(41);
    Tensor x = Tensor::zeros({5, 3});
    for (auto& v : x.mutable_values()) v = rng.uniform(-1, 1);
    Tensor y = soft_moe_forward(x, p);

    // permute experts (2,0,1) together with the matching phi column blocks
    const std::vector<int> perm = {2, 0, 1};
    SoftMoEParams q = SoftMoEParams::zeros(c);
    q.phi = Tensor::zeros({3, 6}).set_requires_grad(true);
    for (int e = 0; e < 3; ++e) {
        q.expert_weights[static_cast<std::size_t>(e)] =
            p.expert_weights[static_cast<std::size_t>(perm[static_cast<std::size_t>(e)])];
        q.expert_biases[static_cast<std::size_t>(e)] =
            p.expert_biases[static_cast<std::size_t>(perm[static_cast<std::size_t>(e)])];
        for (int s = 0; s < 2; ++s)
            for (std::int64_t k = 0; k < 3; ++k)
                q.phi.ref(k, e * 2 + s) = p.phi.at(k, perm[static_cast<std::size_t>(e)] * 2 + s);
    }
    Tensor y2 = soft_moe_forward(x, q);
    for (std::size_t i = 0; i < y.values().size(); ++i)
        EXPECT_NEAR(y2.values()[i], y.values()[i], 1e-12);
}

TEST(Kaiming, deterministic_given_seed) {
    Tensor a = kaiming_init_phi(16, 8, 42);
    Tensor b = kaiming_init_phi(16, 8, 42);
    EXPECT_EQ(std::memcmp(a.values().data(), b.values().data(),
                          sizeof(double) * static_cast<std::size_t>(a.numel())),
              0);
    Tensor c = kaiming_init_phi(16, 8, 43);
    EXPECT_NE(std::memcmp(a.values().data(), c.values().data(),
                          sizeof(double) * static_cast<std::size_t>(a.numel())),
              0);
}

TEST(Kaiming, entries_within_bound) {
    const double bound = std::sqrt(6.0 / 16.0);
    Tensor t = kaiming_init_phi(16, 32, 7);
    for (double v : t.values()) {
        EXPECT_GE(v, -bound);
        EXPECT_LE(v, bound);
    }
}

TEST(Kaiming, empirical_variance_matches_uniform_moment) {
    // uniform on [-b, b] with b^2 = 6/d_ff has variance 2/d_ff
    const int d_ff = 512;
    Tensor t = kaiming_init_phi(d_ff, 196, 2024); // 100352 samples
    double mean = 0.0;
    for (double v : t.values()) mean += v;
    mean /= static_cast<double>(t.numel());
    double var = 0.0;
    for (double v : t.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t.numel());
    const double expect = 2.0 / d_ff;
    EXPECT_NEAR(var, expect, 0.05 * expect);
}

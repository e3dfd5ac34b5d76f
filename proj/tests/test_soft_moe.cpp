#include "smetod/soft_moe.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "smetod/rng.hpp"

using namespace smetod;

namespace {

void fill_random(Tensor& t, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
}

SoftMoEParams random_params(const SoftMoEConfig& config, CounterRng& rng) {
    SoftMoEParams p = SoftMoEParams::zeros(config);
    fill_random(p.phi, rng);
    for (auto& w : p.expert_weights) fill_random(w, rng);
    for (auto& b : p.expert_biases) fill_random(b, rng, -0.3, 0.3);
    return p;
}

oracle::Mat to_mat(const Tensor& t) {
    oracle::Mat m(static_cast<std::size_t>(t.dim(0)),
                  std::vector<double>(static_cast<std::size_t>(t.dim(1))));
    for (std::int64_t i = 0; i < t.dim(0); ++i)
        for (std::int64_t j = 0; j < t.dim(1); ++j)
            m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t.at(i, j);
    return m;
}

oracle::Mat oracle_forward(const Tensor& x, const SoftMoEParams& p,
                           const std::vector<int>& mask = {}) {
    std::vector<oracle::Mat> ws;
    oracle::Mat bs;
    for (const auto& w : p.expert_weights) ws.push_back(to_mat(w));
    for (const auto& b : p.expert_biases)
        bs.emplace_back(b.values().begin(), b.values().end());
    return oracle::soft_moe(to_mat(x), to_mat(p.phi), ws, bs, p.config.slots_per_expert,
                            p.config.masked_softmax ? mask : std::vector<int>{});
}

} // namespace

TEST(SlotIndex, maps_blocks_of_p_slots_to_one_expert) {
    EXPECT_EQ(slot_index_to_expert(1, 2, 4), 1);
    EXPECT_EQ(slot_index_to_expert(2, 2, 4), 1);
    EXPECT_EQ(slot_index_to_expert(3, 2, 4), 2);
    EXPECT_EQ(slot_index_to_expert(4, 2, 4), 2);
    EXPECT_THROW(slot_index_to_expert(0, 2, 4), std::out_of_range);
    EXPECT_THROW(slot_index_to_expert(5, 2, 4), std::out_of_range);
}

TEST(SlotIndex, surjective_onto_experts) {
    const int p = 3, m = 4;
    std::vector<int> hit(m + 1, 0);
    for (int j = 1; j <= m * p; ++j) ++hit[static_cast<std::size_t>(slot_index_to_expert(j, p, m * p))];
    for (int e = 1; e <= m; ++e) EXPECT_EQ(hit[static_cast<std::size_t>(e)], p);
}

TEST(Dispatch, single_token_gets_full_weight) {
    Tensor x = Tensor::matrix(1, 3, {0.5, -0.25, 2.0});
    Tensor phi = Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 1});
    const auto r = dispatch(x, phi, {}, true);
    for (std::int64_t j = 0; j < 2; ++j) {
        EXPECT_DOUBLE_EQ(r.weights.at(0, j), 1.0);
        for (std::int64_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(r.slot_inputs.at(j, k), x.at(0, k));
    }
}

TEST(Dispatch, frozen_two_token_example) {
    Tensor x = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor phi = Tensor::matrix(2, 1, {1, 0});
    const auto r = dispatch(x, phi, {}, true);
    EXPECT_NEAR(r.weights.at(0, 0), 0.7310585786300049, 1e-12);
    EXPECT_NEAR(r.weights.at(1, 0), 0.2689414213699951, 1e-12);
    EXPECT_NEAR(r.slot_inputs.at(0, 0), 0.7310585786300049, 1e-12);
    EXPECT_NEAR(r.slot_inputs.at(0, 1), 0.2689414213699951, 1e-12);
}

TEST(Dispatch, constant_logits_average_unmasked_tokens) {
    // phi column orthogonal to all token differences -> equal logits
    Tensor x = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
    Tensor phi = Tensor::matrix(2, 1, {0, 0});
    const auto r = dispatch(x, phi, {}, true);
    EXPECT_NEAR(r.slot_inputs.at(0, 0), 3.0, 1e-12);
    EXPECT_NEAR(r.slot_inputs.at(0, 1), 4.0, 1e-12);
}

TEST(Dispatch, all_tokens_masked_is_error) {
    Tensor x = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor phi = Tensor::matrix(2, 1, {1, 0});
    const std::vector<double> mask = {0.0, 0.0};
    EXPECT_THROW(dispatch(x, phi, mask, true), std::domain_error);
}

TEST(ApplyExperts, identity_expert_passes_slots_through) {
    SoftMoEConfig c{.num_experts = 1, .slots_per_expert = 2, .d_ff = 2, .d_model = 2};
    SoftMoEParams p = SoftMoEParams::zeros(c);
    p.expert_weights[0] = Tensor::matrix(2, 2, {1, 0, 0, 1}).set_requires_grad(true);
    Tensor slots = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor out = apply_experts(slots, p);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out.values()[i], slots.values()[i]);
}

TEST(ApplyExperts, scalar_experts) {
    SoftMoEConfig c{.num_experts = 2, .slots_per_expert = 1, .d_ff = 2, .d_model = 2};
    SoftMoEParams p = SoftMoEParams::zeros(c);
    p.expert_weights[0] = Tensor::matrix(2, 2, {2, 0, 0, 2}).set_requires_grad(true);
    p.expert_weights[1] = Tensor::matrix(2, 2, {3, 0, 0, 3}).set_requires_grad(true);
    Tensor slots = Tensor::matrix(2, 2, {1, 1, 1, 1});
    Tensor out = apply_experts(slots, p);
    EXPECT_DOUBLE_EQ(out.at(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(out.at(0, 1), 2.0);
    EXPECT_DOUBLE_EQ(out.at(1, 0), 3.0);
    EXPECT_DOUBLE_EQ(out.at(1, 1), 3.0);
}

TEST(ApplyExperts, random_vs_scalar_oracle) {
    CounterRng rng(5);
    SoftMoEConfig c{.num_experts = 3, .slots_per_expert = 2, .d_ff = 4, .d_model = 3};
    SoftMoEParams p = random_params(c, rng);
    Tensor slots = Tensor::zeros({c.total_slots(), c.d_ff});
    fill_random(slots, rng);
    Tensor out = apply_experts(slots, p);
    for (std::int64_t j = 0; j < c.total_slots(); ++j) {
        const int e = slot_index_to_expert(static_cast<int>(j) + 1, c.slots_per_expert,
                                           c.total_slots()) - 1;
        for (std::int64_t col = 0; col < c.d_model; ++col) {
            double acc = p.expert_biases[static_cast<std::size_t>(e)].values()[static_cast<std::size_t>(col)];
            for (std::int64_t k = 0; k < c.d_ff; ++k)
                acc += slots.at(j, k) * p.expert_weights[static_cast<std::size_t>(e)].at(k, col);
            EXPECT_NEAR(out.at(j, col), acc, 1e-12);
        }
    }
}

TEST(Combine, single_slot_broadcasts_to_all_tokens) {
    Tensor x = Tensor::matrix(3, 2, {1, 0, 0, 1, 2, 2});
    Tensor phi = Tensor::matrix(2, 1, {0.3, -0.4});
    Tensor slot_outputs = Tensor::matrix(1, 2, {7, -5});
    Tensor y = combine(x, phi, slot_outputs);
    for (std::int64_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(y.at(i, 0), 7.0);
        EXPECT_DOUBLE_EQ(y.at(i, 1), -5.0);
    }
}

TEST(Combine, frozen_two_slot_example) {
    // one token with logits [1, 0] over two slots
    Tensor x = Tensor::matrix(1, 2, {1, 0});
    Tensor phi = Tensor::matrix(2, 2, {1, 0, 0, 0});
    Tensor slot_outputs = Tensor::matrix(2, 2, {2, 0, 0, 2});
    Tensor y = combine(x, phi, slot_outputs);
    EXPECT_NEAR(y.at(0, 0), 1.4621171572600098, 1e-12);
    EXPECT_NEAR(y.at(0, 1), 0.5378828427399902, 1e-12);
}

TEST(Combine, identical_slot_outputs_are_fixed_point) {
    CounterRng rng(9);
    Tensor x = Tensor::zeros({4, 3});
    Tensor phi = Tensor::zeros({3, 5});
    fill_random(x, rng);
    fill_random(phi, rng);
    Tensor slot_outputs = Tensor::zeros({5, 2});
    for (std::int64_t j = 0; j < 5; ++j) {
        slot_outputs.ref(j, 0) = 1.25;
        slot_outputs.ref(j, 1) = -0.5;
    }
    Tensor y = combine(x, phi, slot_outputs);
    for (std::int64_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(y.at(i, 0), 1.25, 1e-12);
        EXPECT_NEAR(y.at(i, 1), -0.5, 1e-12);
    }
}

TEST(Forward, one_expert_one_slot_single_token_identity) {
    SoftMoEConfig c{.num_experts = 1, .slots_per_expert = 1, .d_ff = 3, .d_model = 3};
    SoftMoEParams p = SoftMoEParams::zeros(c);
    p.expert_weights[0] = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}).set_requires_grad(true);
    Tensor x = Tensor::matrix(1, 3, {0.4, -1.5, 2.25});
    Tensor y = soft_moe_forward(x, p);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y.values()[i], x.values()[i]);
}

TEST(Forward, random_instance_vs_scalar_oracle) {
    CounterRng rng(13);
    SoftMoEConfig c{.num_experts = 2, .slots_per_expert = 2, .d_ff = 3, .d_model = 2};
    SoftMoEParams p = random_params(c, rng);
    Tensor x = Tensor::zeros({4, 3});
    fill_random(x, rng);
    Tensor y = soft_moe_forward(x, p);
    const auto expect = oracle_forward(x, p);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            EXPECT_NEAR(y.at(i, j), expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                        1e-12);
}

TEST(Forward, permutation_equivariance) {
    CounterRng rng(19);
    SoftMoEConfig c{.num_experts = 2, .slots_per_expert = 3, .d_ff = 4, .d_model = 3};
    SoftMoEParams p = random_params(c, rng);
    Tensor x = Tensor::zeros({5, 4});
    fill_random(x, rng);
    const std::vector<std::int64_t> perm = {4, 2, 0, 3, 1};
    Tensor px = Tensor::zeros({5, 4});
    for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t k = 0; k < 4; ++k) px.ref(i, k) = x.at(perm[static_cast<std::size_t>(i)], k);

    Tensor y = soft_moe_forward(x, p);
    Tensor py = soft_moe_forward(px, p);
    for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 3; ++j)
            EXPECT_NEAR(py.at(i, j), y.at(perm[static_cast<std::size_t>(i)], j), 1e-12);
}

TEST(Forward, stochasticity_and_hull_invariants) {
    CounterRng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        SoftMoEConfig c;
        c.num_experts = 1 + static_cast<int>(rng.next_below(3));
        c.slots_per_expert = 1 + static_cast<int>(rng.next_below(3));
        c.d_ff = 2 + static_cast<int>(rng.next_below(3));
        c.d_model = 1 + static_cast<int>(rng.next_below(3));
        const std::int64_t l = 1 + static_cast<std::int64_t>(rng.next_below(5));
        SoftMoEParams p = random_params(c, rng);
        Tensor x = Tensor::zeros({l, c.d_ff});
        fill_random(x, rng, -3.0, 3.0);

        const auto disp = dispatch(x, p.phi, {}, true);
        for (std::int64_t j = 0; j < c.total_slots(); ++j) {
            double total = 0.0;
            for (std::int64_t i = 0; i < l; ++i) {
                EXPECT_GE(disp.weights.at(i, j), 0.0);
                total += disp.weights.at(i, j);
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
        // slot inputs stay in the per-component hull of the tokens
        for (std::int64_t k = 0; k < c.d_ff; ++k) {
            double lo = x.at(0, k), hi = x.at(0, k);
            for (std::int64_t i = 1; i < l; ++i) {
                lo = std::min(lo, x.at(i, k));
                hi = std::max(hi, x.at(i, k));
            }
            for (std::int64_t j = 0; j < c.total_slots(); ++j) {
                EXPECT_GE(disp.slot_inputs.at(j, k), lo - 1e-12);
                EXPECT_LE(disp.slot_inputs.at(j, k), hi + 1e-12);
            }
        }

        const Tensor slot_outputs = apply_experts(disp.slot_inputs, p);
        const Tensor y = combine(x, p.phi, slot_outputs);
        for (std::int64_t col = 0; col < c.d_model; ++col) {
            double lo = slot_outputs.at(0, col), hi = slot_outputs.at(0, col);
            for (std::int64_t j = 1; j < c.total_slots(); ++j) {
                lo = std::min(lo, slot_outputs.at(j, col));
                hi = std::max(hi, slot_outputs.at(j, col));
            }
            for (std::int64_t i = 0; i < l; ++i) {
                EXPECT_GE(y.at(i, col), lo - 1e-12);
                EXPECT_LE(y.at(i, col), hi + 1e-12);
            }
        }
    }
}

TEST(Forward, identical_expert_slot_swap_invariance) {
    CounterRng rng(27);
    SoftMoEConfig c{.num_experts = 3, .slots_per_expert = 2, .d_ff = 3, .d_model = 2};
    SoftMoEParams p = random_params(c, rng);
    // make every expert identical
    for (std::size_t e = 1; e < p.expert_weights.size(); ++e) {
        p.expert_weights[e] = p.expert_weights[0].clone().set_requires_grad(true);
        p.expert_biases[e] = p.expert_biases[0].clone().set_requires_grad(true);
    }
    Tensor x = Tensor::zeros({4, 3});
    fill_random(x, rng);
    Tensor y = soft_moe_forward(x, p);

    // swap phi columns 1 and 4 (different experts)
    SoftMoEParams q = p;
    q.phi = p.phi.clone().set_requires_grad(true);
    for (std::int64_t k = 0; k < 3; ++k) {
        const double a = q.phi.at(k, 1), b = q.phi.at(k, 4);
        q.phi.ref(k, 1) = b;
        q.phi.ref(k, 4) = a;
    }
    Tensor y2 = soft_moe_forward(x, q);
    for (std::size_t i = 0; i < y.values().size(); ++i)
        EXPECT_NEAR(y2.values()[i], y.values()[i], 1e-12);
}

TEST(Forward, padding_invariance_masked_vs_unmasked) {
    CounterRng rng(33);
    SoftMoEConfig c{.num_experts = 2, .slots_per_expert = 2, .d_ff = 3, .d_model = 2};
    c.masked_softmax = true;
    SoftMoEParams p = random_params(c, rng);
    Tensor x = Tensor::zeros({3, 3});
    fill_random(x, rng);
    Tensor y = soft_moe_forward(x, p);

    // append two padding tokens
    Tensor padded = Tensor::zeros({5, 3});
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t k = 0; k < 3; ++k) padded.ref(i, k) = x.at(i, k);
    padded.ref(3, 0) = 0.7;
    padded.ref(4, 1) = -0.2;
    const std::vector<double> mask = {1, 1, 1, 0, 0};

    Tensor y_masked = soft_moe_forward(padded, p, mask);
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 2; ++j) EXPECT_EQ(y_masked.at(i, j), y.at(i, j));

    SoftMoEParams unmasked = p;
    unmasked.config.masked_softmax = false;
    Tensor y_unmasked = soft_moe_forward(padded, unmasked, mask);
    double max_delta = 0.0;
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            max_delta = std::max(max_delta, std::abs(y_unmasked.at(i, j) - y.at(i, j)));
    EXPECT_GT(max_delta, 0.0); // padding leaks through the token softmax by design
}

TEST(Forward, gradients_match_finite_differences) {
    CounterRng rng(39);
    SoftMoEConfig c{.num_experts = 2, .slots_per_expert = 2, .d_ff = 3, .d_model = 2};
    SoftMoEParams p = random_params(c, rng);
    Tensor x = Tensor::zeros({4, 3}, true);
    fill_random(x, rng);

    const auto f = [&] { return sum(mul(soft_moe_forward(x, p), soft_moe_forward(x, p))); };
    std::vector<std::pair<std::string, Tensor>> params = {{"phi", p.phi}, {"x", x}};
    for (std::size_t e = 0; e < p.expert_weights.size(); ++e) {
        params.emplace_back("w" + std::to_string(e), p.expert_weights[e]);
        params.emplace_back("b" + std::to_string(e), p.expert_biases[e]);
    }
    EXPECT_LE(grad_check(f, params, 1e-5).max_rel_err, 1e-6);
}

TEST(Params, closed_form_parameter_count) {
    SoftMoEConfig c{.num_experts = 8, .slots_per_expert = 2, .d_ff = 128, .d_model = 64};
    EXPECT_EQ(SoftMoEParams::parameter_count(c),
              128 * 16 + 8 * (128 * 64 + 64));
    // at fixed total slots, the count is affine in m through the expert maps
    SoftMoEConfig c2 = c;
    c2.num_experts = 16;
    c2.slots_per_expert = 1;
    EXPECT_EQ(SoftMoEParams::parameter_count(c2) - SoftMoEParams::parameter_count(c),
              8 * (128 * 64 + 64));
}

TEST(Params, config_validation) {
    SoftMoEConfig bad{.num_experts = 0, .slots_per_expert = 1, .d_ff = 1, .d_model = 1};
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    SoftMoEConfig huge{.num_experts = 4096, .slots_per_expert = 2, .d_ff = 1, .d_model = 1};
    EXPECT_THROW(huge.validate(), std::invalid_argument);
}

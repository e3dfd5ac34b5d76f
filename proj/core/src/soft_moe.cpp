#include "smetod/soft_moe.hpp"

#include <stdexcept>
#include <string>

namespace smetod {

void SoftMoEConfig::validate() const {
    if (num_experts < 1 || slots_per_expert < 1 || d_ff < 1 || d_model < 1)
        throw std::invalid_argument("SoftMoEConfig: m, p, d_ff, d_model must all be >= 1");
    if (total_slots() > kMaxTotalSlots)
        throw std::invalid_argument("SoftMoEConfig: " + std::to_string(total_slots()) +
                                    " slots exceeds the maximum " +
                                    std::to_string(kMaxTotalSlots));
}

SoftMoEParams SoftMoEParams::zeros(const SoftMoEConfig& config) {
    config.validate();
    SoftMoEParams p;
    p.config = config;
    p.phi = Tensor::zeros({config.d_ff, config.total_slots()}, /*requires_grad=*/true);
    for (int e = 0; e < config.num_experts; ++e) {
        p.expert_weights.push_back(
            Tensor::zeros({config.d_ff, config.d_model}, /*requires_grad=*/true));
        p.expert_biases.push_back(Tensor::zeros({config.d_model}, /*requires_grad=*/true));
    }
    return p;
}

std::int64_t SoftMoEParams::parameter_count(const SoftMoEConfig& c) {
    return static_cast<std::int64_t>(c.d_ff) * c.total_slots() +
           static_cast<std::int64_t>(c.num_experts) *
               (static_cast<std::int64_t>(c.d_ff) * c.d_model + c.d_model);
}

std::int64_t SoftMoEParams::parameter_count() const { return parameter_count(config); }

void SoftMoEParams::validate() const {
    config.validate();
    if (phi.rank() != 2 || phi.dim(0) != config.d_ff || phi.dim(1) != config.total_slots())
        throw std::invalid_argument("SoftMoEParams: phi is " + shape_to_string(phi.shape()) +
                                    ", expected [" + std::to_string(config.d_ff) + "x" +
                                    std::to_string(config.total_slots()) + "]");
    if (static_cast<int>(expert_weights.size()) != config.num_experts ||
        static_cast<int>(expert_biases.size()) != config.num_experts)
        throw std::invalid_argument("SoftMoEParams: expected " +
                                    std::to_string(config.num_experts) + " experts");
    for (const auto& w : expert_weights)
        if (w.rank() != 2 || w.dim(0) != config.d_ff || w.dim(1) != config.d_model)
            throw std::invalid_argument("SoftMoEParams: expert weight is " +
                                        shape_to_string(w.shape()));
    for (const auto& b : expert_biases)
        if (b.rank() != 1 || b.dim(0) != config.d_model)
            throw std::invalid_argument("SoftMoEParams: expert bias is " +
                                        shape_to_string(b.shape()));
}

int slot_index_to_expert(int slot_index, int slots_per_expert, int total_slots) {
    if (slot_index < 1 || slot_index > total_slots)
        throw std::out_of_range("slot_index_to_expert: slot " + std::to_string(slot_index) +
                                " outside [1, " + std::to_string(total_slots) + "]");
    return (slot_index + slots_per_expert - 1) / slots_per_expert;
}

namespace {

// Expand a per-token mask to the [l x s] logit grid (token i masks row i).
Tensor expand_token_mask(std::span<const double> token_mask, std::int64_t l, std::int64_t s) {
    Tensor full = Tensor::zeros({l, s});
    for (std::int64_t i = 0; i < l; ++i) {
        const double v = token_mask[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < s; ++j) full.mutable_values()[i * s + j] = v;
    }
    return full;
}

void check_token_mask(std::span<const double> token_mask, std::int64_t l) {
    if (!token_mask.empty() && static_cast<std::int64_t>(token_mask.size()) != l)
        throw std::invalid_argument("token mask covers " + std::to_string(token_mask.size()) +
                                    " tokens but the input has " + std::to_string(l));
}

} // namespace

DispatchResult dispatch(const Tensor& x, const Tensor& phi, std::span<const double> token_mask,
                        bool masked_softmax) {
    if (x.rank() != 2 || phi.rank() != 2 || x.dim(1) != phi.dim(0))
        throw std::invalid_argument("dispatch: incompatible shapes " +
                                    shape_to_string(x.shape()) + " and " +
                                    shape_to_string(phi.shape()));
    check_token_mask(token_mask, x.dim(0));

    Tensor logits = matmul(x, phi);
    DispatchResult r;
    if (masked_softmax && !token_mask.empty()) {
        Tensor mask = expand_token_mask(token_mask, x.dim(0), phi.dim(1));
        r.weights = softmax(logits, /*axis=*/0, &mask);
    } else {
        r.weights = softmax(logits, /*axis=*/0);
    }
    r.slot_inputs = matmul(transpose(r.weights), x);
    return r;
}

Tensor apply_experts(const Tensor& slot_inputs, const SoftMoEParams& params) {
    params.validate();
    const auto& c = params.config;
    if (slot_inputs.rank() != 2 || slot_inputs.dim(0) != c.total_slots() ||
        slot_inputs.dim(1) != c.d_ff)
        throw std::invalid_argument("apply_experts: slot inputs are " +
                                    shape_to_string(slot_inputs.shape()) + ", expected [" +
                                    std::to_string(c.total_slots()) + "x" +
                                    std::to_string(c.d_ff) + "]");

    const std::int64_t s = c.total_slots(), dff = c.d_ff, d = c.d_model;
    Tensor out = Tensor::zeros({s, d});
    for (std::int64_t j = 0; j < s; ++j) {
        const int e = static_cast<int>(j) / c.slots_per_expert;
        const double* in_row = slot_inputs.values().data() + j * dff;
        const double* w = params.expert_weights[static_cast<std::size_t>(e)].values().data();
        const double* b = params.expert_biases[static_cast<std::size_t>(e)].values().data();
        double* out_row = out.mutable_values().data() + j * d;
        for (std::int64_t k = 0; k < d; ++k) out_row[k] = b[k];
        for (std::int64_t t = 0; t < dff; ++t) {
            const double v = in_row[t];
            const double* wrow = w + t * d;
            for (std::int64_t k = 0; k < d; ++k) out_row[k] += v * wrow[k];
        }
    }

    std::vector<const Tensor*> inputs = {&slot_inputs};
    for (const auto& w : params.expert_weights) inputs.push_back(&w);
    for (const auto& b : params.expert_biases) inputs.push_back(&b);
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
        out.set_requires_grad(true);
        if (Tape* tape = Tape::active()) {
            auto sin = slot_inputs.impl();
            auto sout = out.impl();
            std::vector<std::shared_ptr<detail::Storage>> ws, bs;
            for (const auto& w : params.expert_weights) ws.push_back(w.impl());
            for (const auto& b : params.expert_biases) bs.push_back(b.impl());
            std::vector<std::shared_ptr<detail::Storage>> keep = {sin};
            keep.insert(keep.end(), ws.begin(), ws.end());
            keep.insert(keep.end(), bs.begin(), bs.end());
            const int p = c.slots_per_expert;
            tape->record(std::move(keep), sout, [sin, sout, ws, bs, s, dff, d, p] {
                const double* dy = sout->grad.data();
                for (std::int64_t j = 0; j < s; ++j) {
                    const auto e = static_cast<std::size_t>(j / p);
                    const double* dyrow = dy + j * d;
                    if (sin->requires_grad) {
                        sin->ensure_grad();
                        const double* w = ws[e]->value.data();
                        double* din = sin->grad.data() + j * dff;
                        for (std::int64_t t = 0; t < dff; ++t) {
                            const double* wrow = w + t * d;
                            double acc = 0.0;
                            for (std::int64_t k = 0; k < d; ++k) acc += dyrow[k] * wrow[k];
                            din[t] += acc;
                        }
                    }
                    if (ws[e]->requires_grad) {
                        ws[e]->ensure_grad();
                        const double* in_row = sin->value.data() + j * dff;
                        double* dw = ws[e]->grad.data();
                        for (std::int64_t t = 0; t < dff; ++t) {
                            const double v = in_row[t];
                            double* dwrow = dw + t * d;
                            for (std::int64_t k = 0; k < d; ++k) dwrow[k] += v * dyrow[k];
                        }
                    }
                    if (bs[e]->requires_grad) {
                        bs[e]->ensure_grad();
                        double* db = bs[e]->grad.data();
                        for (std::int64_t k = 0; k < d; ++k) db[k] += dyrow[k];
                    }
                }
            });
        }
    }
    return out;
}

Tensor combine(const Tensor& x, const Tensor& phi, const Tensor& slot_outputs) {
    if (x.rank() != 2 || phi.rank() != 2 || x.dim(1) != phi.dim(0))
        throw std::invalid_argument("combine: incompatible shapes " + shape_to_string(x.shape()) +
                                    " and " + shape_to_string(phi.shape()));
    if (slot_outputs.rank() != 2 || slot_outputs.dim(0) != phi.dim(1))
        throw std::invalid_argument("combine: slot outputs are " +
                                    shape_to_string(slot_outputs.shape()) + " but phi has " +
                                    std::to_string(phi.dim(1)) + " slots");
    Tensor logits = matmul(x, phi);
    Tensor weights = softmax(logits, /*axis=*/1);
    return matmul(weights, slot_outputs);
}

Tensor soft_moe_forward(const Tensor& x, const SoftMoEParams& params,
                        std::span<const double> token_mask) {
    params.validate();
    auto dispatched = dispatch(x, params.phi, token_mask, params.config.masked_softmax);
    Tensor slot_outputs = apply_experts(dispatched.slot_inputs, params);
    return combine(x, params.phi, slot_outputs);
}

} // namespace smetod

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "smetod/rng.hpp"
#include "smetod/soft_moe.hpp"
#include "smetod/tensor.hpp"

namespace smetod {

// Encoder-decoder transformer where every encoder block's second feed-forward
// map is a Soft-MoE layer; decoder blocks keep dense feed-forward maps.
// Pre-norm residuals, GELU, learned positions, tied input/output embedding.
struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int d_ff = 128;
    int num_encoder_layers = 2;
    int num_decoder_layers = 2;
    int num_heads = 4;
    int max_len = 128;
    int moe_experts = 4;
    int moe_slots_per_expert = 2;
    bool moe_masked_softmax = true;
    double dropout_rate = 0.1;
    // donor variant for upcycling: a plain dense second feed-forward map
    bool dense_encoder_ffn = false;
    int pad_id = 0;
    int eos_id = 2;

    void validate() const;
    SoftMoEConfig moe_config() const;
    std::string canonical_text() const;
    static ModelConfig from_canonical_text(const std::string& text);
};

struct LayerNormParams {
    Tensor gain, bias;
};

struct AttentionParams {
    std::vector<Tensor> wq, wk, wv; // one [d x d_k] map per head
    Tensor wo;                      // [d x d]
};

struct EncoderBlock {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    Tensor ffn_w1, ffn_b1; // g: d -> d_ff, GELU
    bool has_soft_moe = true;
    SoftMoEParams moe;     // second map when has_soft_moe
    Tensor ffn_w2, ffn_b2; // second map in the dense donor variant
};

struct DecoderBlock {
    LayerNormParams ln1, ln2, ln3;
    AttentionParams self_attn, cross_attn;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Mean negative log-likelihood over non-pad target positions.
Tensor nll_loss(const Tensor& logits, std::span<const int> target_ids, int pad_id);

class TrainDivergedError : public std::runtime_error {
public:
    TrainDivergedError(int step, double lr, double grad_norm);
    int step;
    double lr;
    double grad_norm;
};

struct TokenizedPair {
    std::vector<int> src, tgt;
};

struct TrainConfig {
    int steps = 500;
    int batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    int log_every = 25;
};

struct TrainStepLog {
    int step;
    double loss;
    double grad_norm;
    double lr;
};

struct TrainLog {
    std::vector<TrainStepLog> steps;
    double final_loss = 0.0;
};

class Seq2SeqModel {
public:
    static Seq2SeqModel build(const ModelConfig& config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }

    // Parameters in a fixed order; names are the checkpoint manifest names.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::int64_t parameter_count() const;

    // src_mask[i] = 1 for real tokens, 0 for right padding; empty = all real.
    Tensor encode(std::span<const int> src_ids, std::span<const double> src_mask = {}) const;

    // Teacher-forced decoder pass; returns logits [len(tgt_input) x vocab].
    Tensor decode(const Tensor& enc_out, std::span<const double> src_mask,
                  std::span<const int> tgt_input_ids) const;

    // Loss for one (src, tgt) pair; records on the active tape when training.
    Tensor example_loss(const TokenizedPair& example, CounterRng* dropout_rng = nullptr) const;

    // Deterministic argmax decoding; stops at EOS, ties go to the lowest id.
    std::vector<int> greedy_decode(std::span<const int> src_ids, int max_len,
                                   std::span<const double> src_mask = {}) const;

    const std::vector<EncoderBlock>& encoder_blocks() const { return encoder_; }
    const std::vector<DecoderBlock>& decoder_blocks() const { return decoder_; }
    std::vector<EncoderBlock>& mutable_encoder_blocks() { return encoder_; }
    int soft_moe_layer_count() const;

    // test hook: skip the self-attention sublayer in encoder blocks
    void set_attention_bypass(bool on) { attention_bypass_ = on; }

    void save(const std::string& path) const;
    static Seq2SeqModel load(const std::string& path);

    // Replicate each encoder layer's dense second feed-forward map from a
    // donor checkpoint into that layer's experts and re-draw phi.
    void upcycle_from_dense_checkpoint(const std::string& donor_path, std::uint64_t phi_seed);

private:
    Seq2SeqModel() = default;

    Tensor embed(std::span<const int> ids, CounterRng* dropout_rng) const;
    Tensor encode_impl(std::span<const int> src_ids, std::span<const double> src_mask,
                       CounterRng* dropout_rng) const;
    Tensor decode_impl(const Tensor& enc_out, std::span<const double> src_mask,
                       std::span<const int> tgt_input_ids, CounterRng* dropout_rng) const;
    Tensor maybe_dropout(const Tensor& x, CounterRng* dropout_rng) const;

    ModelConfig config_;
    Tensor tok_embedding_; // [vocab x d], also the output projection
    Tensor pos_embedding_; // [max_len x d]
    std::vector<EncoderBlock> encoder_;
    std::vector<DecoderBlock> decoder_;
    LayerNormParams enc_final_ln_, dec_final_ln_;
    bool attention_bypass_ = false;
};

TrainLog train(Seq2SeqModel& model, std::span<const TokenizedPair> examples,
               const TrainConfig& config);

} // namespace smetod

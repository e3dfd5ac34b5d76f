#include "smetod/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "smetod/checkpoint.hpp"
#include "smetod/init_transfer.hpp"
#include "smetod/optimizer.hpp"

namespace smetod {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Tensor uniform_tensor(Shape shape, double bound, std::uint64_t seed) {
    Tensor t = Tensor::zeros(std::move(shape));
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double u = static_cast<double>(CounterRng::hash_at(seed, i) >> 11) * 0x1.0p-53;
        vals[i] = bound * (2.0 * u - 1.0);
    }
    return t;
}

// key mask shared by every query row; empty src_mask means no mask
Tensor key_mask_tensor(std::span<const double> src_mask, std::int64_t queries) {
    const auto lk = static_cast<std::int64_t>(src_mask.size());
    Tensor m = Tensor::zeros({queries, lk});
    for (std::int64_t i = 0; i < queries; ++i)
        for (std::int64_t j = 0; j < lk; ++j)
            m.mutable_values()[i * lk + j] = src_mask[static_cast<std::size_t>(j)];
    return m;
}

Tensor causal_mask_tensor(std::int64_t len) {
    Tensor m = Tensor::zeros({len, len});
    for (std::int64_t i = 0; i < len; ++i)
        for (std::int64_t j = 0; j <= i; ++j) m.mutable_values()[i * len + j] = 1.0;
    return m;
}

bool all_ones(std::span<const double> mask) {
    for (double v : mask)
        if (v == 0.0) return false;
    return true;
}

} // namespace

// ---- ModelConfig -----------------------------------------------------------

void ModelConfig::validate() const {
    if (vocab_size < 1) throw std::invalid_argument("ModelConfig: vocab_size must be >= 1");
    if (num_heads < 1 || d_model % num_heads != 0)
        throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                    " not divisible by num_heads " + std::to_string(num_heads));
    if (d_ff < d_model) throw std::invalid_argument("ModelConfig: d_ff must be >= d_model");
    if (max_len < 2) throw std::invalid_argument("ModelConfig: max_len must be >= 2");
    if (num_encoder_layers < 1 || num_decoder_layers < 1)
        throw std::invalid_argument("ModelConfig: layer counts must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw std::invalid_argument("ModelConfig: dropout_rate must be in [0, 1)");
    if (pad_id < 0 || pad_id >= vocab_size || eos_id < 0 || eos_id >= vocab_size)
        throw std::invalid_argument("ModelConfig: pad/eos ids outside the vocabulary");
    if (!dense_encoder_ffn) moe_config().validate();
}

SoftMoEConfig ModelConfig::moe_config() const {
    SoftMoEConfig c;
    c.num_experts = moe_experts;
    c.slots_per_expert = moe_slots_per_expert;
    c.d_ff = d_ff;
    c.d_model = d_model;
    c.masked_softmax = moe_masked_softmax;
    return c;
}

std::string ModelConfig::canonical_text() const {
    std::ostringstream os;
    os << "d_ff=" << d_ff << "\n";
    os << "d_model=" << d_model << "\n";
    os << "decoder_layers=" << num_decoder_layers << "\n";
    os << "dense_encoder_ffn=" << (dense_encoder_ffn ? 1 : 0) << "\n";
    os << "dropout=" << fmt_double(dropout_rate) << "\n";
    os << "encoder_layers=" << num_encoder_layers << "\n";
    os << "eos_id=" << eos_id << "\n";
    os << "heads=" << num_heads << "\n";
    os << "masked_softmax=" << (moe_masked_softmax ? 1 : 0) << "\n";
    os << "max_len=" << max_len << "\n";
    os << "moe_experts=" << moe_experts << "\n";
    os << "moe_slots_per_expert=" << moe_slots_per_expert << "\n";
    os << "pad_id=" << pad_id << "\n";
    os << "vocab_size=" << vocab_size << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_canonical_text(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("ModelConfig: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "d_ff") c.d_ff = std::stoi(value);
        else if (key == "d_model") c.d_model = std::stoi(value);
        else if (key == "decoder_layers") c.num_decoder_layers = std::stoi(value);
        else if (key == "dense_encoder_ffn") c.dense_encoder_ffn = std::stoi(value) != 0;
        else if (key == "dropout") c.dropout_rate = std::stod(value);
        else if (key == "encoder_layers") c.num_encoder_layers = std::stoi(value);
        else if (key == "eos_id") c.eos_id = std::stoi(value);
        else if (key == "heads") c.num_heads = std::stoi(value);
        else if (key == "masked_softmax") c.moe_masked_softmax = std::stoi(value) != 0;
        else if (key == "max_len") c.max_len = std::stoi(value);
        else if (key == "moe_experts") c.moe_experts = std::stoi(value);
        else if (key == "moe_slots_per_expert") c.moe_slots_per_expert = std::stoi(value);
        else if (key == "pad_id") c.pad_id = std::stoi(value);
        else if (key == "vocab_size") c.vocab_size = std::stoi(value);
        else throw std::runtime_error("ModelConfig: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

// ---- nll_loss ---------------------------------------------------------------

Tensor nll_loss(const Tensor& logits, std::span<const int> target_ids, int pad_id) {
    return cross_entropy_mean(logits, target_ids, pad_id);
}

TrainDivergedError::TrainDivergedError(int step_, double lr_, double grad_norm_)
    : std::runtime_error("training diverged at step " + std::to_string(step_) + " (lr " +
                         fmt_double(lr_) + ", grad norm " + fmt_double(grad_norm_) + ")"),
      step(step_), lr(lr_), grad_norm(grad_norm_) {}

// ---- construction -----------------------------------------------------------

Seq2SeqModel Seq2SeqModel::build(const ModelConfig& config, std::uint64_t init_seed) {
    config.validate();
    Seq2SeqModel m;
    m.config_ = config;
    const int d = config.d_model, dff = config.d_ff, dk = config.d_model / config.num_heads;

    CounterRng root(init_seed);
    std::uint64_t stream = 0;
    const auto next_seed = [&] { return root.fork(stream++).seed(); };

    m.tok_embedding_ = uniform_tensor({config.vocab_size, d}, 0.05, next_seed());
    m.tok_embedding_.set_requires_grad(true);
    m.pos_embedding_ = uniform_tensor({config.max_len, d}, 0.02, next_seed());
    m.pos_embedding_.set_requires_grad(true);

    const auto make_ln = [&](LayerNormParams& ln) {
        ln.gain = Tensor::full({d}, 1.0, true);
        ln.bias = Tensor::zeros({d}, true);
    };
    const auto make_attn = [&](AttentionParams& a) {
        for (int h = 0; h < config.num_heads; ++h) {
            a.wq.push_back(kaiming_uniform(d, dk, next_seed()).set_requires_grad(true));
            a.wk.push_back(kaiming_uniform(d, dk, next_seed()).set_requires_grad(true));
            a.wv.push_back(kaiming_uniform(d, dk, next_seed()).set_requires_grad(true));
        }
        a.wo = kaiming_uniform(d, d, next_seed()).set_requires_grad(true);
    };

    for (int k = 0; k < config.num_encoder_layers; ++k) {
        EncoderBlock b;
        make_ln(b.ln1);
        make_attn(b.attn);
        make_ln(b.ln2);
        b.ffn_w1 = kaiming_uniform(d, dff, next_seed()).set_requires_grad(true);
        b.ffn_b1 = Tensor::zeros({dff}, true);
        b.has_soft_moe = !config.dense_encoder_ffn;
        if (b.has_soft_moe) {
            b.moe = SoftMoEParams::zeros(config.moe_config());
            b.moe.phi = kaiming_init_phi(dff, b.moe.config.total_slots(), next_seed())
                            .set_requires_grad(true);
            for (auto& w : b.moe.expert_weights)
                w = kaiming_uniform(dff, d, next_seed()).set_requires_grad(true);
        } else {
            b.ffn_w2 = kaiming_uniform(dff, d, next_seed()).set_requires_grad(true);
            b.ffn_b2 = Tensor::zeros({d}, true);
        }
        m.encoder_.push_back(std::move(b));
    }
    make_ln(m.enc_final_ln_);

    for (int k = 0; k < config.num_decoder_layers; ++k) {
        DecoderBlock b;
        make_ln(b.ln1);
        make_attn(b.self_attn);
        make_ln(b.ln2);
        make_attn(b.cross_attn);
        make_ln(b.ln3);
        b.ffn_w1 = kaiming_uniform(d, dff, next_seed()).set_requires_grad(true);
        b.ffn_b1 = Tensor::zeros({dff}, true);
        b.ffn_w2 = kaiming_uniform(dff, d, next_seed()).set_requires_grad(true);
        b.ffn_b2 = Tensor::zeros({d}, true);
        m.decoder_.push_back(std::move(b));
    }
    make_ln(m.dec_final_ln_);
    return m;
}

std::vector<std::pair<std::string, Tensor>> Seq2SeqModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed.tok", tok_embedding_);
    out.emplace_back("embed.pos", pos_embedding_);
    const auto add_ln = [&](const std::string& prefix, const LayerNormParams& ln) {
        out.emplace_back(prefix + ".gain", ln.gain);
        out.emplace_back(prefix + ".bias", ln.bias);
    };
    const auto add_attn = [&](const std::string& prefix, const AttentionParams& a) {
        for (std::size_t h = 0; h < a.wq.size(); ++h) {
            out.emplace_back(prefix + ".h" + std::to_string(h) + ".wq", a.wq[h]);
            out.emplace_back(prefix + ".h" + std::to_string(h) + ".wk", a.wk[h]);
            out.emplace_back(prefix + ".h" + std::to_string(h) + ".wv", a.wv[h]);
        }
        out.emplace_back(prefix + ".wo", a.wo);
    };
    for (std::size_t k = 0; k < encoder_.size(); ++k) {
        const auto& b = encoder_[k];
        const std::string p = "enc" + std::to_string(k);
        add_ln(p + ".ln1", b.ln1);
        add_attn(p + ".attn", b.attn);
        add_ln(p + ".ln2", b.ln2);
        out.emplace_back(p + ".ffn.w1", b.ffn_w1);
        out.emplace_back(p + ".ffn.b1", b.ffn_b1);
        if (b.has_soft_moe) {
            out.emplace_back(p + ".moe.phi", b.moe.phi);
            for (std::size_t e = 0; e < b.moe.expert_weights.size(); ++e) {
                out.emplace_back(p + ".moe.expert" + std::to_string(e) + ".w",
                                 b.moe.expert_weights[e]);
                out.emplace_back(p + ".moe.expert" + std::to_string(e) + ".b",
                                 b.moe.expert_biases[e]);
            }
        } else {
            out.emplace_back(p + ".ffn.w2", b.ffn_w2);
            out.emplace_back(p + ".ffn.b2", b.ffn_b2);
        }
    }
    add_ln("enc.final_ln", enc_final_ln_);
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
        const auto& b = decoder_[k];
        const std::string p = "dec" + std::to_string(k);
        add_ln(p + ".ln1", b.ln1);
        add_attn(p + ".self_attn", b.self_attn);
        add_ln(p + ".ln2", b.ln2);
        add_attn(p + ".cross_attn", b.cross_attn);
        add_ln(p + ".ln3", b.ln3);
        out.emplace_back(p + ".ffn.w1", b.ffn_w1);
        out.emplace_back(p + ".ffn.b1", b.ffn_b1);
        out.emplace_back(p + ".ffn.w2", b.ffn_w2);
        out.emplace_back(p + ".ffn.b2", b.ffn_b2);
    }
    add_ln("dec.final_ln", dec_final_ln_);
    return out;
}

std::int64_t Seq2SeqModel::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

int Seq2SeqModel::soft_moe_layer_count() const {
    int n = 0;
    for (const auto& b : encoder_)
        if (b.has_soft_moe) ++n;
    return n;
}

// ---- forward ----------------------------------------------------------------

Tensor Seq2SeqModel::maybe_dropout(const Tensor& x, CounterRng* dropout_rng) const {
    if (!dropout_rng || config_.dropout_rate <= 0.0) return x;
    const double keep = 1.0 - config_.dropout_rate;
    Tensor mask = Tensor::zeros(x.shape());
    auto vals = mask.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = dropout_rng->uniform() < config_.dropout_rate ? 0.0 : 1.0 / keep;
    return mul(x, mask);
}

Tensor Seq2SeqModel::embed(std::span<const int> ids, CounterRng* dropout_rng) const {
    std::vector<int> positions(ids.size());
    std::iota(positions.begin(), positions.end(), 0);
    Tensor x = add(embedding_rows(tok_embedding_, ids), embedding_rows(pos_embedding_, positions));
    return maybe_dropout(x, dropout_rng);
}

namespace {

Tensor attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p,
                 const Tensor* key_mask) {
    const auto dk = p.wq[0].dim(1);
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Tensor> heads;
    heads.reserve(p.wq.size());
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        Tensor q = matmul(q_in, p.wq[h]);
        Tensor k = matmul(kv_in, p.wk[h]);
        Tensor v = matmul(kv_in, p.wv[h]);
        Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
        Tensor w = softmax(scores, /*axis=*/1, key_mask);
        heads.push_back(matmul(w, v));
    }
    Tensor cat = concat(heads, /*axis=*/1);
    return matmul(cat, p.wo);
}

} // namespace

Tensor Seq2SeqModel::encode_impl(std::span<const int> src_ids, std::span<const double> src_mask,
                                 CounterRng* dropout_rng) const {
    if (static_cast<int>(src_ids.size()) > config_.max_len)
        throw std::length_error("encode: input of " + std::to_string(src_ids.size()) +
                                " tokens exceeds max_len " + std::to_string(config_.max_len));
    if (src_ids.empty()) throw std::invalid_argument("encode: empty input");
    if (!src_mask.empty() && src_mask.size() != src_ids.size())
        throw std::invalid_argument("encode: mask size mismatch");

    const bool masked = !src_mask.empty() && !all_ones(src_mask);
    Tensor x = embed(src_ids, dropout_rng);
    std::optional<Tensor> key_mask;
    if (masked) key_mask = key_mask_tensor(src_mask, static_cast<std::int64_t>(src_ids.size()));

    std::span<const double> moe_mask = masked ? src_mask : std::span<const double>{};
    for (const auto& b : encoder_) {
        Tensor a = x;
        if (!attention_bypass_) {
            Tensor h = layer_norm(x, b.ln1.gain, b.ln1.bias, 1e-5);
            Tensor attn_out = attention(h, h, b.attn, key_mask ? &*key_mask : nullptr);
            a = add(x, maybe_dropout(attn_out, dropout_rng));
        }
        Tensor h2 = layer_norm(a, b.ln2.gain, b.ln2.bias, 1e-5);
        Tensor ff = gelu(add_rowwise(matmul(h2, b.ffn_w1), b.ffn_b1));
        Tensor second = b.has_soft_moe
                            ? soft_moe_forward(ff, b.moe, moe_mask)
                            : add_rowwise(matmul(ff, b.ffn_w2), b.ffn_b2);
        x = add(a, maybe_dropout(second, dropout_rng));
    }
    return layer_norm(x, enc_final_ln_.gain, enc_final_ln_.bias, 1e-5);
}

Tensor Seq2SeqModel::encode(std::span<const int> src_ids, std::span<const double> src_mask) const {
    return encode_impl(src_ids, src_mask, nullptr);
}

Tensor Seq2SeqModel::decode_impl(const Tensor& enc_out, std::span<const double> src_mask,
                                 std::span<const int> tgt_input_ids,
                                 CounterRng* dropout_rng) const {
    if (static_cast<int>(tgt_input_ids.size()) > config_.max_len)
        throw std::length_error("decode: target of " + std::to_string(tgt_input_ids.size()) +
                                " tokens exceeds max_len " + std::to_string(config_.max_len));
    if (tgt_input_ids.empty()) throw std::invalid_argument("decode: empty target");

    const auto t_len = static_cast<std::int64_t>(tgt_input_ids.size());
    Tensor causal = causal_mask_tensor(t_len);
    std::optional<Tensor> cross_mask;
    if (!src_mask.empty() && !all_ones(src_mask)) cross_mask = key_mask_tensor(src_mask, t_len);

    Tensor y = embed(tgt_input_ids, dropout_rng);
    for (const auto& b : decoder_) {
        Tensor h = layer_norm(y, b.ln1.gain, b.ln1.bias, 1e-5);
        y = add(y, maybe_dropout(attention(h, h, b.self_attn, &causal), dropout_rng));
        Tensor h2 = layer_norm(y, b.ln2.gain, b.ln2.bias, 1e-5);
        y = add(y, maybe_dropout(
                       attention(h2, enc_out, b.cross_attn, cross_mask ? &*cross_mask : nullptr),
                       dropout_rng));
        Tensor h3 = layer_norm(y, b.ln3.gain, b.ln3.bias, 1e-5);
        Tensor ff = add_rowwise(matmul(gelu(add_rowwise(matmul(h3, b.ffn_w1), b.ffn_b1)), b.ffn_w2),
                                b.ffn_b2);
        y = add(y, maybe_dropout(ff, dropout_rng));
    }
    Tensor out = layer_norm(y, dec_final_ln_.gain, dec_final_ln_.bias, 1e-5);
    return matmul(out, transpose(tok_embedding_)); // tied output projection
}

Tensor Seq2SeqModel::decode(const Tensor& enc_out, std::span<const double> src_mask,
                            std::span<const int> tgt_input_ids) const {
    return decode_impl(enc_out, src_mask, tgt_input_ids, nullptr);
}

Tensor Seq2SeqModel::example_loss(const TokenizedPair& example, CounterRng* dropout_rng) const {
    std::vector<int> tgt_in;
    tgt_in.reserve(example.tgt.size() + 1);
    tgt_in.push_back(config_.pad_id); // decoder start token
    tgt_in.insert(tgt_in.end(), example.tgt.begin(), example.tgt.end());
    std::vector<int> targets(example.tgt.begin(), example.tgt.end());
    targets.push_back(config_.eos_id);

    Tensor enc = encode_impl(example.src, {}, dropout_rng);
    Tensor logits = decode_impl(enc, {}, tgt_in, dropout_rng);
    return nll_loss(logits, targets, config_.pad_id);
}

std::vector<int> Seq2SeqModel::greedy_decode(std::span<const int> src_ids, int max_len,
                                             std::span<const double> src_mask) const {
    if (max_len > config_.max_len)
        throw std::length_error("greedy_decode: max_len " + std::to_string(max_len) +
                                " exceeds model max_len " + std::to_string(config_.max_len));
    Tensor enc = encode(src_ids, src_mask);
    std::vector<int> generated;
    std::vector<int> tgt_in = {config_.pad_id};
    for (int step = 0; step < max_len; ++step) {
        Tensor logits = decode(enc, src_mask, tgt_in);
        const std::int64_t last = logits.dim(0) - 1;
        const double* row = logits.values().data() + last * logits.dim(1);
        int best = 0;
        for (int j = 1; j < config_.vocab_size; ++j)
            if (row[j] > row[best]) best = j; // ties keep the lowest id
        if (best == config_.eos_id) break;
        generated.push_back(best);
        tgt_in.push_back(best);
        if (static_cast<int>(tgt_in.size()) >= config_.max_len) break;
    }
    return generated;
}

// ---- persistence ------------------------------------------------------------

void Seq2SeqModel::save(const std::string& path) const {
    const auto params = named_parameters();
    save_checkpoint(path, config_.canonical_text(), params);
}

Seq2SeqModel Seq2SeqModel::load(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    ModelConfig config = ModelConfig::from_canonical_text(ck.config_text);
    Seq2SeqModel model = build(config, 0);

    std::map<std::string, Tensor> by_name(ck.tensors.begin(), ck.tensors.end());
    auto params = model.named_parameters();
    if (by_name.size() != params.size())
        throw std::runtime_error("checkpoint: manifest has " + std::to_string(by_name.size()) +
                                 " tensors, model wants " + std::to_string(params.size()));
    for (auto& [name, dst] : params) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape() != dst.shape())
            throw std::runtime_error("checkpoint: tensor '" + name + "' is " +
                                     shape_to_string(it->second.shape()) + ", model wants " +
                                     shape_to_string(dst.shape()));
        std::copy(it->second.values().begin(), it->second.values().end(),
                  dst.mutable_values().begin());
    }
    return model;
}

void Seq2SeqModel::upcycle_from_dense_checkpoint(const std::string& donor_path,
                                                 std::uint64_t phi_seed) {
    LoadedCheckpoint donor = load_checkpoint(donor_path);
    ModelConfig donor_config = ModelConfig::from_canonical_text(donor.config_text);
    if (!donor_config.dense_encoder_ffn)
        throw std::runtime_error("upcycle: donor checkpoint is not a dense-encoder model");

    std::map<std::string, Tensor> by_name(donor.tensors.begin(), donor.tensors.end());
    // shared weights transfer directly wherever names line up
    for (auto& [name, dst] : named_parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) continue;
        if (it->second.shape() != dst.shape())
            throw std::invalid_argument("upcycle: tensor '" + name + "' is " +
                                        shape_to_string(it->second.shape()) + ", model wants " +
                                        shape_to_string(dst.shape()));
        std::copy(it->second.values().begin(), it->second.values().end(),
                  dst.mutable_values().begin());
    }

    for (std::size_t k = 0; k < encoder_.size(); ++k) {
        auto& block = encoder_[k];
        if (!block.has_soft_moe) continue;
        const std::string prefix = "enc" + std::to_string(k) + ".ffn.";
        auto w2 = by_name.find(prefix + "w2");
        auto b2 = by_name.find(prefix + "b2");
        if (w2 == by_name.end() || b2 == by_name.end())
            throw std::runtime_error("upcycle: donor lacks " + prefix + "w2/b2");
        DenseFFNSnapshot snapshot{w2->second, b2->second, donor_path};
        UpcycledExperts experts = upcycle_experts(snapshot, block.moe.config.num_experts);
        block.moe.expert_weights = std::move(experts.weights);
        block.moe.expert_biases = std::move(experts.biases);
        block.moe.phi = kaiming_init_phi(block.moe.config.d_ff, block.moe.config.total_slots(),
                                         CounterRng::hash_at(phi_seed, k))
                            .set_requires_grad(true);
        block.moe.validate();
    }
}

// ---- training ---------------------------------------------------------------

TrainLog train(Seq2SeqModel& model, std::span<const TokenizedPair> examples,
               const TrainConfig& config) {
    if (examples.empty()) throw std::invalid_argument("train: no examples");
    auto params = model.named_parameters();
    AdamOptimizer opt(AdamConfig{.lr = config.lr});

    CounterRng root(config.seed);
    CounterRng order_rng = root.fork(1);
    CounterRng dropout_rng = root.fork(2);

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size(); // force a shuffle on first use

    TrainLog log;
    for (int step = 1; step <= config.steps; ++step) {
        opt.zero_grad(params);
        Tape tape;
        Tensor total;
        for (int b = 0; b < config.batch_size; ++b) {
            if (cursor == order.size()) {
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[order_rng.next_below(i)]);
                cursor = 0;
            }
            Tensor loss = model.example_loss(examples[order[cursor++]], &dropout_rng);
            total = (b == 0) ? loss : add(total, loss);
        }
        total = scale(total, 1.0 / config.batch_size);
        const double loss_val = total.item();
        tape.backward(total);
        const double grad_norm = AdamOptimizer::grad_norm(params);
        if (!std::isfinite(loss_val) || !std::isfinite(grad_norm))
            throw TrainDivergedError(step, config.lr, grad_norm);
        opt.step(params);
        log.steps.push_back({step, loss_val, grad_norm, config.lr});
        log.final_loss = loss_val;
    }
    return log;
}

} // namespace smetod

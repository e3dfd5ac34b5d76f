#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace oracle {

Mat matmul(const Mat& a, const Mat& b) {
    const std::size_t l = a.size(), k = b.size(), n = b[0].size();
    Mat c(l, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += a[i][t] * b[t][j];
            c[i][j] = acc;
        }
    return c;
}

Mat transpose(const Mat& a) {
    Mat t(a[0].size(), std::vector<double>(a.size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

std::vector<double> softmax_vec(const std::vector<double>& xs) {
    const double mx = *std::max_element(xs.begin(), xs.end());
    double denom = 0.0;
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out[i] = std::exp(xs[i] - mx);
        denom += out[i];
    }
    for (auto& v : out) v /= denom;
    return out;
}

std::vector<double> layer_norm_row(const std::vector<double>& row,
                                   const std::vector<double>& gain,
                                   const std::vector<double>& bias, double eps) {
    const auto d = row.size();
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d; ++j)
        out[j] = (row[j] - mean) / std::sqrt(var + eps) * gain[j] + bias[j];
    return out;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Mat soft_moe(const Mat& x, const Mat& phi, const std::vector<Mat>& expert_w, const Mat& expert_b,
             int slots_per_expert, const std::vector<int>& mask) {
    const std::size_t l = x.size();
    const std::size_t dff = x[0].size();
    const std::size_t slots = phi[0].size();
    const std::size_t d = expert_w[0][0].size();

    const auto live = [&](std::size_t i) { return mask.empty() || mask[i] != 0; };

    Mat logits(l, std::vector<double>(slots, 0.0));
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < slots; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < dff; ++k) acc += x[i][k] * phi[k][j];
            logits[i][j] = acc;
        }

    // dispatch: softmax over the token axis, per slot
    Mat dispatch(l, std::vector<double>(slots, 0.0));
    for (std::size_t j = 0; j < slots; ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < l; ++i)
            if (live(i)) mx = std::max(mx, logits[i][j]);
        double denom = 0.0;
        for (std::size_t i = 0; i < l; ++i)
            if (live(i)) denom += std::exp(logits[i][j] - mx);
        for (std::size_t i = 0; i < l; ++i)
            dispatch[i][j] = live(i) ? std::exp(logits[i][j] - mx) / denom : 0.0;
    }

    Mat slot_inputs(slots, std::vector<double>(dff, 0.0));
    for (std::size_t j = 0; j < slots; ++j)
        for (std::size_t k = 0; k < dff; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < l; ++i) acc += dispatch[i][j] * x[i][k];
            slot_inputs[j][k] = acc;
        }

    // expert of slot j (1-based): ceil(j/p)
    Mat slot_outputs(slots, std::vector<double>(d, 0.0));
    for (std::size_t j = 0; j < slots; ++j) {
        const auto e = static_cast<std::size_t>(
            (static_cast<int>(j) + 1 + slots_per_expert - 1) / slots_per_expert - 1);
        for (std::size_t c = 0; c < d; ++c) {
            double acc = expert_b[e][c];
            for (std::size_t k = 0; k < dff; ++k) acc += slot_inputs[j][k] * expert_w[e][k][c];
            slot_outputs[j][c] = acc;
        }
    }

    // combine: softmax over the slot axis, per token
    Mat out(l, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < l; ++i) {
        const std::vector<double> weights = softmax_vec(logits[i]);
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < slots; ++j) acc += weights[j] * slot_outputs[j][c];
            out[i][c] = acc;
        }
    }
    return out;
}

Mat encoder_block(const Mat& x, const BlockWeights& w, double ln_eps) {
    const std::size_t l = x.size();
    const std::size_t heads = w.wq.size();

    Mat normed(l);
    for (std::size_t i = 0; i < l; ++i)
        normed[i] = layer_norm_row(x[i], w.ln1_gain, w.ln1_bias, ln_eps);

    Mat cat(l, std::vector<double>{});
    for (std::size_t h = 0; h < heads; ++h) {
        const Mat q = matmul(normed, w.wq[h]);
        const Mat k = matmul(normed, w.wk[h]);
        const Mat v = matmul(normed, w.wv[h]);
        const double inv = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
        Mat scores = matmul(q, transpose(k));
        for (auto& row : scores)
            for (auto& s : row) s *= inv;
        for (std::size_t i = 0; i < l; ++i) {
            const auto weights = softmax_vec(scores[i]);
            std::vector<double> head_out(v[0].size(), 0.0);
            for (std::size_t j = 0; j < l; ++j)
                for (std::size_t c = 0; c < v[0].size(); ++c)
                    head_out[c] += weights[j] * v[j][c];
            cat[i].insert(cat[i].end(), head_out.begin(), head_out.end());
        }
    }
    const Mat attn = matmul(cat, w.wo);

    Mat a(l);
    for (std::size_t i = 0; i < l; ++i) {
        a[i].resize(x[i].size());
        for (std::size_t c = 0; c < x[i].size(); ++c) a[i][c] = x[i][c] + attn[i][c];
    }

    Mat normed2(l);
    for (std::size_t i = 0; i < l; ++i)
        normed2[i] = layer_norm_row(a[i], w.ln2_gain, w.ln2_bias, ln_eps);
    Mat ff = matmul(normed2, w.ffn_w1);
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t c = 0; c < ff[i].size(); ++c)
            ff[i][c] = gelu_scalar(ff[i][c] + w.ffn_b1[c]);

    const Mat moe_out = soft_moe(ff, w.phi, w.expert_w, w.expert_b, w.slots_per_expert);

    Mat out(l);
    for (std::size_t i = 0; i < l; ++i) {
        out[i].resize(a[i].size());
        for (std::size_t c = 0; c < a[i].size(); ++c) out[i][c] = a[i][c] + moe_out[i][c];
    }
    return out;
}

double nll_mean(const Mat& logits, const std::vector<int>& targets, int ignore_id) {
    double loss = 0.0;
    int live = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (targets[i] == ignore_id) continue;
        ++live;
        const double mx = *std::max_element(logits[i].begin(), logits[i].end());
        double denom = 0.0;
        for (double v : logits[i]) denom += std::exp(v - mx);
        loss -= (logits[i][static_cast<std::size_t>(targets[i])] - mx) - std::log(denom);
    }
    if (live == 0) throw std::invalid_argument("nll_mean: nothing to score");
    return loss / live;
}

} // namespace oracle

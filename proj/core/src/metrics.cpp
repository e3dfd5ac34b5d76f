#include "smetod/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "smetod/vocab.hpp"

namespace smetod {

std::string normalize_text(const std::string& text) {
    std::string out;
    bool in_space = true;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out += ' ';
        in_space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

double intent_accuracy(std::span<const std::string> preds, std::span<const std::string> golds) {
    if (preds.empty() || preds.size() != golds.size())
        throw std::invalid_argument("intent_accuracy: " + std::to_string(preds.size()) +
                                    " predictions vs " + std::to_string(golds.size()) + " golds");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (normalize_text(preds[i]) == normalize_text(golds[i])) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

double joint_goal_accuracy(std::span<const BeliefState> preds,
                           std::span<const BeliefState> golds) {
    if (preds.empty() || preds.size() != golds.size())
        throw std::invalid_argument("joint_goal_accuracy: " + std::to_string(preds.size()) +
                                    " predictions vs " + std::to_string(golds.size()) + " golds");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == golds[i]) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::pair<double, double> inform_success(std::span<const DialogueEvalRecord> records) {
    if (records.empty()) return {0.0, 0.0};
    std::size_t informed = 0, succeeded = 0;
    for (const auto& r : records) {
        const auto tokens = split_whitespace(normalize_text(r.response));
        const auto has_token = [&](const std::string& t) {
            return std::find(tokens.begin(), tokens.end(), normalize_text(t)) != tokens.end();
        };
        bool inform = false;
        for (const auto& name : r.matching_names)
            if (has_token(name)) {
                inform = true;
                break;
            }
        if (!inform) continue;
        ++informed;
        bool success = true;
        for (const auto& slot : r.requested_slots) {
            const std::string* value = nullptr;
            for (const auto& [s, v] : r.gold_db.top_attributes)
                if (s == slot) value = &v;
            if (!value) {
                success = false;
                break;
            }
            // every token of the value must appear
            for (const auto& vt : split_whitespace(normalize_text(*value)))
                if (!has_token(vt)) {
                    success = false;
                    break;
                }
            if (!success) break;
        }
        if (success) ++succeeded;
    }
    const auto n = static_cast<double>(records.size());
    return {100.0 * static_cast<double>(informed) / n,
            100.0 * static_cast<double>(succeeded) / n};
}

namespace {

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& tokens,
                                                     std::size_t n) {
    std::map<std::vector<std::string>, int> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

} // namespace

double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
    if (hypotheses.empty() || hypotheses.size() != references.size())
        throw std::invalid_argument("bleu: " + std::to_string(hypotheses.size()) +
                                    " hypotheses vs " + std::to_string(references.size()) +
                                    " references");
    constexpr std::size_t kMaxN = 4;
    double matches[kMaxN] = {0, 0, 0, 0};
    double totals[kMaxN] = {0, 0, 0, 0};
    double hyp_len = 0.0, ref_len = 0.0;

    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto hyp = split_whitespace(hypotheses[i]);
        const auto ref = split_whitespace(references[i]);
        hyp_len += static_cast<double>(hyp.size());
        ref_len += static_cast<double>(ref.size());
        for (std::size_t n = 1; n <= kMaxN; ++n) {
            const auto hyp_counts = ngram_counts(hyp, n);
            const auto ref_counts = ngram_counts(ref, n);
            for (const auto& [gram, count] : hyp_counts) {
                totals[n - 1] += count;
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
            }
        }
    }

    if (hyp_len == 0.0) return 0.0; // brevity penalty collapses to 0
    double log_precision = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
        double p;
        if (n == 1) {
            if (matches[0] == 0.0) return 0.0;
            p = matches[0] / totals[0];
        } else {
            p = (matches[n - 1] + 1.0) / (totals[n - 1] + 1.0);
        }
        log_precision += 0.25 * std::log(p);
    }
    const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return 100.0 * bp * std::exp(log_precision);
}

EvalReport EvalReport::from_scores(double intent_acc, double jga, double inform, double success,
                                   double bleu_score) {
    EvalReport r;
    r.intent_accuracy = intent_acc;
    r.jga = jga;
    r.inform = inform;
    r.success = success;
    r.bleu = bleu_score;
    r.combined = (inform + success) * 0.5 + bleu_score;
    return r;
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed;
    os << "intent_accuracy: " << intent_accuracy << "\n";
    os << "jga:             " << jga << "\n";
    os << "inform:          " << inform << "\n";
    os << "success:         " << success << "\n";
    os << "bleu:            " << bleu << "\n";
    os << "combined:        " << combined << "\n";
    return os.str();
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "intent_accuracy,jga,inform,success,bleu,combined\n";
    os << intent_accuracy << "," << jga << "," << inform << "," << success << "," << bleu << ","
       << combined << "\n";
    return os.str();
}

} // namespace smetod

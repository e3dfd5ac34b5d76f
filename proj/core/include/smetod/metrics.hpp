#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smetod/dialogue.hpp"

namespace smetod {

// Lowercase, trim, collapse inner whitespace.
std::string normalize_text(const std::string& text);

// Exact string match after normalization, in percent.
double intent_accuracy(std::span<const std::string> preds, std::span<const std::string> golds);

// A turn scores only when the predicted pair set equals gold exactly.
double joint_goal_accuracy(std::span<const BeliefState> preds,
                           std::span<const BeliefState> golds);

// One per evaluated dialogue.
struct DialogueEvalRecord {
    std::string response;                     // predicted final response
    DBResult gold_db;                         // gold belief's DB result
    std::vector<std::string> matching_names;  // every entity matching the gold belief
    std::vector<std::string> requested_slots;
    BeliefState gold_belief;
};

// Inform: the response names an entity from the gold match set. Success:
// inform holds and every requested slot's value (taken from the gold top
// entity) appears in the response.
std::pair<double, double> inform_success(std::span<const DialogueEvalRecord> records);

// Corpus BLEU-4, uniform weights, add-one smoothing on n-gram precisions for
// n >= 2, multiplicative brevity penalty; in [0, 100].
double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

struct ExampleRecord {
    std::string id;
    std::string pred;
    std::string gold;
    bool correct = false;
};

struct EvalReport {
    double intent_accuracy = 0.0;
    double jga = 0.0;
    double inform = 0.0;
    double success = 0.0;
    double bleu = 0.0;
    double combined = 0.0; // (inform + success) * 0.5 + bleu
    std::vector<ExampleRecord> records;

    static EvalReport from_scores(double intent_acc, double jga, double inform, double success,
                                  double bleu);
    std::string to_text() const;
    std::string to_csv() const; // header + one row
};

} // namespace smetod

#pragma once

#include <span>
#include <string>
#include <vector>

#include "smetod/corpus.hpp"
#include "smetod/dialogue.hpp"
#include "smetod/metrics.hpp"
#include "smetod/transformer.hpp"
#include "smetod/vocab.hpp"

namespace smetod {

TokenizedPair tokenize_example(const Vocab& vocab, const DialogueExample& example);

std::vector<TokenizedPair> tokenize_examples(const Vocab& vocab,
                                             std::span<const DialogueExample> examples,
                                             Task task);

// Greedy prediction as text.
std::string predict_text(const Seq2SeqModel& model, const Vocab& vocab, const std::string& x,
                         int max_new_tokens = 48);

TextModel make_text_model(const Seq2SeqModel& model, const Vocab& vocab,
                          int max_new_tokens = 48);

struct TaskEvalResult {
    double score = 0.0; // accuracy for NLU, JGA for DST
    std::vector<ExampleRecord> records;
};

TaskEvalResult evaluate_nlu(const Seq2SeqModel& model, const Vocab& vocab,
                            std::span<const DialogueExample> examples);

TaskEvalResult evaluate_dst(const Seq2SeqModel& model, const Vocab& vocab,
                            std::span<const DialogueExample> examples);

// Two-step NLG evaluation over full dialogues: the DST model predicts the
// belief that grounds the DB lookup (or the gold belief when dst_model is
// null), then the NLG model generates the final response. Inform/Success are
// scored over dialogues with a non-empty gold belief; BLEU over all final
// responses.
EvalReport evaluate_end_to_end(const Seq2SeqModel* dst_model, const Seq2SeqModel& nlg_model,
                               const Vocab& vocab,
                               std::span<const AnnotatedDialogue> dialogues,
                               std::span<const std::string> splits, const std::string& split,
                               const ToyDatabase& db);

// Training-time NLG input for the final turn of a dialogue (gold grounding).
std::string gold_nlg_input(const AnnotatedDialogue& dialogue, const ToyDatabase& db);

} // namespace smetod

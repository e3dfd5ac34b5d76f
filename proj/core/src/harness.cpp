#include "smetod/harness.hpp"

#include <algorithm>
#include <stdexcept>

namespace smetod {

TokenizedPair tokenize_example(const Vocab& vocab, const DialogueExample& example) {
    return {vocab.encode(example.x), vocab.encode(example.y)};
}

std::vector<TokenizedPair> tokenize_examples(const Vocab& vocab,
                                             std::span<const DialogueExample> examples,
                                             Task task) {
    std::vector<TokenizedPair> out;
    for (const auto& ex : examples)
        if (ex.task == task) out.push_back(tokenize_example(vocab, ex));
    return out;
}

std::string predict_text(const Seq2SeqModel& model, const Vocab& vocab, const std::string& x,
                         int max_new_tokens) {
    const std::vector<int> src = vocab.encode(x);
    const std::vector<int> out =
        model.greedy_decode(src, std::min(max_new_tokens, model.config().max_len));
    return vocab.decode(out);
}

TextModel make_text_model(const Seq2SeqModel& model, const Vocab& vocab, int max_new_tokens) {
    return [&model, &vocab, max_new_tokens](const std::string& x) {
        return predict_text(model, vocab, x, max_new_tokens);
    };
}

TaskEvalResult evaluate_nlu(const Seq2SeqModel& model, const Vocab& vocab,
                            std::span<const DialogueExample> examples) {
    std::vector<std::string> preds, golds;
    TaskEvalResult result;
    for (const auto& ex : examples) {
        if (ex.task != Task::nlu) continue;
        std::string pred = predict_text(model, vocab, ex.x, 8);
        preds.push_back(pred);
        golds.push_back(ex.gold.intent);
        result.records.push_back({ex.dialogue_id + "#" + std::to_string(ex.turn_id), pred,
                                  ex.gold.intent,
                                  normalize_text(pred) == normalize_text(ex.gold.intent)});
    }
    if (preds.empty()) throw std::invalid_argument("evaluate_nlu: no NLU examples");
    result.score = intent_accuracy(preds, golds);
    return result;
}

TaskEvalResult evaluate_dst(const Seq2SeqModel& model, const Vocab& vocab,
                            std::span<const DialogueExample> examples) {
    std::vector<BeliefState> preds, golds;
    TaskEvalResult result;
    for (const auto& ex : examples) {
        if (ex.task != Task::dst) continue;
        const std::string text = predict_text(model, vocab, ex.x, 48);
        BeliefState pred = parse_belief(text);
        preds.push_back(pred);
        golds.push_back(ex.gold.belief);
        result.records.push_back({ex.dialogue_id + "#" + std::to_string(ex.turn_id), text, ex.y,
                                  pred == ex.gold.belief});
    }
    if (preds.empty()) throw std::invalid_argument("evaluate_dst: no DST examples");
    result.score = joint_goal_accuracy(preds, golds);
    return result;
}

std::string gold_nlg_input(const AnnotatedDialogue& dialogue, const ToyDatabase& db) {
    const BeliefState& final_belief = dialogue.turn_beliefs.back();
    const DBResult r = db_query(final_belief, db);
    return serialize_history(dialogue.history) + " " + serialize_db_result(r);
}

EvalReport evaluate_end_to_end(const Seq2SeqModel* dst_model, const Seq2SeqModel& nlg_model,
                               const Vocab& vocab,
                               std::span<const AnnotatedDialogue> dialogues,
                               std::span<const std::string> splits, const std::string& split,
                               const ToyDatabase& db) {
    TextModel nlg = make_text_model(nlg_model, vocab);
    std::vector<std::string> hyps, refs;
    std::vector<DialogueEvalRecord> dialogue_records;
    std::vector<ExampleRecord> audit;

    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        if (!splits.empty() && splits[i] != split) continue;
        const auto& d = dialogues[i];
        const BeliefState& gold_belief = d.turn_beliefs.back();

        InferTrace trace;
        if (dst_model) {
            TextModel dst = make_text_model(*dst_model, vocab);
            trace = end_to_end_infer(d.history, dst, nlg, db);
        } else {
            // gold-belief stub: ground the response in the gold DB result
            TextModel oracle = [&gold_belief](const std::string&) {
                return linearize_belief(gold_belief);
            };
            trace = end_to_end_infer(d.history, oracle, nlg, db);
        }

        hyps.push_back(trace.response);
        refs.push_back(d.final_response);
        audit.push_back({d.id, trace.response, d.final_response,
                         normalize_text(trace.response) == normalize_text(d.final_response)});

        if (gold_belief.empty()) continue; // chitchat dialogues carry no DB goal
        DialogueEvalRecord rec;
        rec.response = trace.response;
        rec.gold_belief = gold_belief;
        rec.gold_db = db_query(gold_belief, db);
        for (const auto& e : db.entities) {
            bool ok = true;
            for (const auto& [slot, value] : gold_belief.pairs) {
                const std::string* have = e.attribute(slot);
                if (!have || *have != value) {
                    ok = false;
                    break;
                }
            }
            if (ok) rec.matching_names.push_back(e.name);
        }
        rec.requested_slots = d.requested_slots;
        dialogue_records.push_back(std::move(rec));
    }

    if (hyps.empty()) throw std::invalid_argument("evaluate_end_to_end: no dialogues in split");
    const auto [inform, success] = inform_success(dialogue_records);
    EvalReport report = EvalReport::from_scores(0.0, 0.0, inform, success, bleu(hyps, refs));
    report.records = std::move(audit);
    return report;
}

} // namespace smetod

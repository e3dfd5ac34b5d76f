#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace smetod {

enum class Speaker { system, user };

struct DialogueTurn {
    Speaker speaker;
    std::string utterance;
};

// Alternating turns starting with the system; excludes the final system
// response.
struct DialogueHistory {
    std::vector<DialogueTurn> turns;
    void validate() const;
    int user_turns() const { return static_cast<int>(turns.size()) / 2; }
};

// Ordered (slot, value) pairs; corpus-produced states are in schema order.
// Equality is set equality over the pairs.
struct BeliefState {
    std::vector<std::pair<std::string, std::string>> pairs;
    bool malformed = false; // set when parsed from malformed text

    void set(const std::string& slot, const std::string& value); // upsert
    const std::string* value_of(const std::string& slot) const;
    bool empty() const { return pairs.empty(); }
    bool operator==(const BeliefState& other) const;
};

struct IntentLabel {
    std::string name;
};

struct DbEntity {
    std::string domain;
    std::string name;
    std::vector<std::pair<std::string, std::string>> attributes; // includes "domain"
    const std::string* attribute(const std::string& slot) const;
};

struct ToyDatabase {
    std::vector<DbEntity> entities;
    int size() const { return static_cast<int>(entities.size()); }
};

struct DBResult {
    int match_count = 0;
    std::optional<std::string> top_entity;
    // full attribute map of the top entity, for metric checks
    std::vector<std::pair<std::string, std::string>> top_attributes;
};

enum class Task { nlu, dst, nlg };

std::string task_name(Task task);
Task task_from_name(const std::string& name);

struct GoldAnnotation {
    std::string intent;
    BeliefState belief;
    std::string response;
    std::vector<std::string> requested_slots;
};

struct DialogueExample {
    Task task = Task::nlu;
    std::string x, y;
    GoldAnnotation gold;
    std::string dialogue_id;
    int turn_id = 0;
};

// Fully annotated dialogue as produced by the corpus generator.
struct AnnotatedDialogue {
    std::string id;
    std::string domain;
    DialogueHistory history;    // [u1_sys, u1_usr, ..., ut_sys, ut_usr]
    std::string final_response; // r
    std::vector<std::string> turn_intents;  // one per user turn
    std::vector<BeliefState> turn_beliefs;  // cumulative, one per user turn
    std::vector<std::string> requested_slots;
};

// ---- serialization ----------------------------------------------------------

// "[sys] hello [usr] find thai food"; utterances may not contain reserved
// markers.
std::string serialize_history(const DialogueHistory& h);
DialogueHistory parse_history(const std::string& text);

// "[bs] slot1 = value1 ; slot2 = value2" (bare "[bs]" when empty)
std::string linearize_belief(const BeliefState& b);
// Total on generated text: malformed segments are skipped best-effort and the
// malformed flag is set instead of raising.
BeliefState parse_belief(const std::string& text);

// "[db] count = k ; name = X" (name omitted when k = 0)
std::string serialize_db_result(const DBResult& r);

// Entities matching every pair exactly; unknown slots match nothing. Ties on
// the top entity break to the lexicographically smallest name.
DBResult db_query(const BeliefState& b, const ToyDatabase& db);

std::vector<DialogueExample> make_examples(const AnnotatedDialogue& dialogue, Task task,
                                           const ToyDatabase& db);

// ---- two-step inference -----------------------------------------------------

using TextModel = std::function<std::string(const std::string&)>;

struct InferTrace {
    BeliefState belief;
    bool belief_malformed = false;
    DBResult db_result;
    std::string nlg_input;
    std::string response;
};

// Predict the belief, query the DB with it, then generate the response from
// the history plus the serialized DB state.
InferTrace end_to_end_infer(const DialogueHistory& h, const TextModel& dst_model,
                            const TextModel& nlg_model, const ToyDatabase& db);

// ---- file formats -----------------------------------------------------------

void write_examples_jsonl(const std::string& path, std::span<const DialogueExample> examples);
std::vector<DialogueExample> read_examples_jsonl(const std::string& path);

void write_database_jsonl(const std::string& path, const ToyDatabase& db);
ToyDatabase read_database_jsonl(const std::string& path);

} // namespace smetod

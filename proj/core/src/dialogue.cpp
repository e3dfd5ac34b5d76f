#include "smetod/dialogue.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "smetod/vocab.hpp"

namespace smetod {

using nlohmann::json;

void DialogueHistory::validate() const {
    if (turns.size() < 2 || turns.size() % 2 != 0)
        throw std::invalid_argument("DialogueHistory: need alternating sys/usr pairs, got " +
                                    std::to_string(turns.size()) + " turns");
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const Speaker expected = (i % 2 == 0) ? Speaker::system : Speaker::user;
        if (turns[i].speaker != expected)
            throw std::invalid_argument("DialogueHistory: turn " + std::to_string(i) +
                                        " breaks sys/usr alternation");
        if (turns[i].utterance.empty())
            throw std::invalid_argument("DialogueHistory: empty utterance at turn " +
                                        std::to_string(i));
    }
}

void BeliefState::set(const std::string& slot, const std::string& value) {
    for (auto& [s, v] : pairs)
        if (s == slot) {
            v = value;
            return;
        }
    pairs.emplace_back(slot, value);
}

const std::string* BeliefState::value_of(const std::string& slot) const {
    for (const auto& [s, v] : pairs)
        if (s == slot) return &v;
    return nullptr;
}

bool BeliefState::operator==(const BeliefState& other) const {
    if (pairs.size() != other.pairs.size()) return false;
    auto a = pairs, b = other.pairs;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
}

const std::string* DbEntity::attribute(const std::string& slot) const {
    for (const auto& [s, v] : attributes)
        if (s == slot) return &v;
    return nullptr;
}

std::string task_name(Task task) {
    switch (task) {
        case Task::nlu: return "nlu";
        case Task::dst: return "dst";
        case Task::nlg: return "nlg";
    }
    throw std::logic_error("task_name: bad task");
}

Task task_from_name(const std::string& name) {
    if (name == "nlu") return Task::nlu;
    if (name == "dst") return Task::dst;
    if (name == "nlg") return Task::nlg;
    throw std::invalid_argument("unknown task '" + name + "' (want nlu|dst|nlg)");
}

// ---- serialization ----------------------------------------------------------

namespace {

void check_no_markers(const std::string& utterance) {
    for (const auto& marker : Vocab::reserved_tokens()) {
        if (marker == "=" || marker == ";") continue; // plain punctuation is allowed
        if (utterance.find(marker) != std::string::npos)
            throw std::invalid_argument("utterance contains reserved marker '" + marker +
                                        "': " + utterance);
    }
}

} // namespace

std::string serialize_history(const DialogueHistory& h) {
    h.validate();
    std::string out;
    for (const auto& turn : h.turns) {
        check_no_markers(turn.utterance);
        if (!out.empty()) out += ' ';
        out += (turn.speaker == Speaker::system) ? "[sys]" : "[usr]";
        out += ' ';
        out += turn.utterance;
    }
    return out;
}

DialogueHistory parse_history(const std::string& text) {
    DialogueHistory h;
    std::vector<std::string> tokens = split_whitespace(text);
    std::optional<Speaker> current;
    std::string utterance;
    const auto flush = [&] {
        if (!current) return;
        h.turns.push_back({*current, utterance});
        utterance.clear();
    };
    for (const auto& tok : tokens) {
        if (tok == "[sys]" || tok == "[usr]") {
            flush();
            current = tok == "[sys]" ? Speaker::system : Speaker::user;
        } else {
            if (!utterance.empty()) utterance += ' ';
            utterance += tok;
        }
    }
    flush();
    h.validate();
    return h;
}

std::string linearize_belief(const BeliefState& b) {
    std::string out = "[bs]";
    for (std::size_t i = 0; i < b.pairs.size(); ++i) {
        out += (i == 0) ? " " : " ; ";
        out += b.pairs[i].first + " = " + b.pairs[i].second;
    }
    return out;
}

BeliefState parse_belief(const std::string& text) {
    BeliefState b;
    std::vector<std::string> tokens = split_whitespace(text);
    std::size_t start = 0;
    if (!tokens.empty() && tokens[0] == "[bs]") {
        start = 1;
    } else {
        b.malformed = true; // missing marker; still harvest what we can
    }

    std::vector<std::vector<std::string>> segments(1);
    for (std::size_t i = start; i < tokens.size(); ++i) {
        if (tokens[i] == ";")
            segments.emplace_back();
        else
            segments.back().push_back(tokens[i]);
    }

    for (const auto& seg : segments) {
        if (seg.empty()) continue;
        const auto eq = std::find(seg.begin(), seg.end(), "=");
        if (eq == seg.end() || eq == seg.begin() || eq + 1 == seg.end()) {
            b.malformed = true;
            continue;
        }
        std::string slot, value;
        for (auto it = seg.begin(); it != eq; ++it) {
            if (!slot.empty()) slot += ' ';
            slot += *it;
        }
        for (auto it = eq + 1; it != seg.end(); ++it) {
            if (*it == "=") {
                b.malformed = true;
                continue;
            }
            if (!value.empty()) value += ' ';
            value += *it;
        }
        if (b.value_of(slot) != nullptr) b.malformed = true; // duplicate slot, last wins
        b.set(slot, value);
    }
    return b;
}

std::string serialize_db_result(const DBResult& r) {
    std::string out = "[db] count = " + std::to_string(r.match_count);
    if (r.match_count >= 1 && r.top_entity) out += " ; name = " + *r.top_entity;
    return out;
}

DBResult db_query(const BeliefState& b, const ToyDatabase& db) {
    DBResult r;
    const DbEntity* top = nullptr;
    for (const auto& entity : db.entities) {
        bool ok = true;
        for (const auto& [slot, value] : b.pairs) {
            const std::string* have = entity.attribute(slot);
            if (!have || *have != value) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        ++r.match_count;
        if (!top || entity.name < top->name) top = &entity;
    }
    if (top) {
        r.top_entity = top->name;
        r.top_attributes = top->attributes;
    }
    return r;
}

// ---- example construction ---------------------------------------------------

namespace {

void check_annotations(const AnnotatedDialogue& d) {
    d.history.validate();
    const auto t = static_cast<std::size_t>(d.history.user_turns());
    if (d.turn_intents.size() != t || d.turn_beliefs.size() != t)
        throw std::runtime_error("dialogue " + d.id + ": gold annotations cover " +
                                 std::to_string(d.turn_intents.size()) + "/" +
                                 std::to_string(d.turn_beliefs.size()) + " turns, history has " +
                                 std::to_string(t));
    if (d.final_response.empty())
        throw std::runtime_error("dialogue " + d.id + ": missing gold response");
}

DialogueHistory history_prefix(const DialogueHistory& h, int user_turns) {
    DialogueHistory out;
    out.turns.assign(h.turns.begin(), h.turns.begin() + 2 * user_turns);
    return out;
}

// system utterance that answers user turn k (1-based): the next system turn,
// or the final response after the last user turn
std::string response_after(const AnnotatedDialogue& d, int k) {
    const auto idx = static_cast<std::size_t>(2 * k);
    if (idx < d.history.turns.size()) return d.history.turns[idx].utterance;
    return d.final_response;
}

} // namespace

std::vector<DialogueExample> make_examples(const AnnotatedDialogue& dialogue, Task task,
                                           const ToyDatabase& db) {
    check_annotations(dialogue);
    const int t = dialogue.history.user_turns();
    std::vector<DialogueExample> out;
    for (int k = 1; k <= t; ++k) {
        DialogueExample ex;
        ex.task = task;
        ex.dialogue_id = dialogue.id;
        ex.turn_id = k;
        ex.gold.intent = dialogue.turn_intents[static_cast<std::size_t>(k - 1)];
        ex.gold.belief = dialogue.turn_beliefs[static_cast<std::size_t>(k - 1)];
        ex.gold.response = response_after(dialogue, k);
        if (k == t) ex.gold.requested_slots = dialogue.requested_slots;

        const std::string h = serialize_history(history_prefix(dialogue.history, k));
        switch (task) {
            case Task::nlu:
                ex.x = h;
                ex.y = ex.gold.intent;
                break;
            case Task::dst:
                ex.x = h;
                ex.y = linearize_belief(ex.gold.belief);
                break;
            case Task::nlg: {
                const DBResult r = db_query(ex.gold.belief, db);
                ex.x = h + " " + serialize_db_result(r);
                ex.y = ex.gold.response;
                break;
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

// ---- two-step inference -----------------------------------------------------

InferTrace end_to_end_infer(const DialogueHistory& h, const TextModel& dst_model,
                            const TextModel& nlg_model, const ToyDatabase& db) {
    InferTrace trace;
    const std::string history_text = serialize_history(h);
    trace.belief = parse_belief(dst_model(history_text));
    trace.belief_malformed = trace.belief.malformed;
    trace.db_result = db_query(trace.belief, db);
    trace.nlg_input = history_text + " " + serialize_db_result(trace.db_result);
    trace.response = nlg_model(trace.nlg_input);
    return trace;
}

// ---- file formats -----------------------------------------------------------

namespace {

json belief_to_json(const BeliefState& b) {
    json arr = json::array();
    for (const auto& [s, v] : b.pairs) arr.push_back(json::array({s, v}));
    return arr;
}

BeliefState belief_from_json(const json& arr) {
    BeliefState b;
    for (const auto& pair : arr) b.pairs.emplace_back(pair.at(0), pair.at(1));
    return b;
}

} // namespace

void write_examples_jsonl(const std::string& path, std::span<const DialogueExample> examples) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& ex : examples) {
        json j{{"task", task_name(ex.task)},
               {"x", ex.x},
               {"y", ex.y},
               {"gold",
                {{"intent", ex.gold.intent},
                 {"belief", belief_to_json(ex.gold.belief)},
                 {"response", ex.gold.response},
                 {"requested", ex.gold.requested_slots}}},
               {"dialogue_id", ex.dialogue_id},
               {"turn_id", ex.turn_id}};
        f << j.dump() << "\n";
    }
}

std::vector<DialogueExample> read_examples_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<DialogueExample> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        DialogueExample ex;
        ex.task = task_from_name(j.at("task"));
        ex.x = j.at("x");
        ex.y = j.at("y");
        ex.gold.intent = j.at("gold").at("intent");
        ex.gold.belief = belief_from_json(j.at("gold").at("belief"));
        ex.gold.response = j.at("gold").at("response");
        ex.gold.requested_slots = j.at("gold").at("requested").get<std::vector<std::string>>();
        ex.dialogue_id = j.at("dialogue_id");
        ex.turn_id = j.at("turn_id");
        out.push_back(std::move(ex));
    }
    return out;
}

void write_database_jsonl(const std::string& path, const ToyDatabase& db) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& e : db.entities) {
        json attrs = json::object();
        for (const auto& [s, v] : e.attributes) attrs[s] = v;
        json j{{"domain", e.domain}, {"name", e.name}, {"attributes", attrs}};
        f << j.dump() << "\n";
    }
}

ToyDatabase read_database_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    ToyDatabase db;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        DbEntity e;
        e.domain = j.at("domain");
        e.name = j.at("name");
        for (const auto& [k, v] : j.at("attributes").items())
            e.attributes.emplace_back(k, v.get<std::string>());
        std::sort(e.attributes.begin(), e.attributes.end());
        db.entities.push_back(std::move(e));
    }
    return db;
}

} // namespace smetod

#include "smetod/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "smetod/rng.hpp"

namespace smetod {

using nlohmann::json;

CorpusSpec CorpusSpec::defaults() {
    CorpusSpec s;
    s.domains = {
        {"restaurant",
         {{"area", {"north", "south", "east", "west", "centre"}},
          {"food", {"thai", "italian", "chinese", "indian", "mexican", "french", "korean", "spanish"}},
          {"pricerange", {"cheap", "moderate", "expensive"}}}},
        {"hotel",
         {{"area", {"north", "south", "east", "west", "centre"}},
          {"stars", {"1", "2", "3", "4", "5"}},
          {"parking", {"yes", "no"}}}},
    };
    s.intents = {"find_restaurant", "book_restaurant", "find_hotel", "book_hotel",
                 "request_info",    "greet",           "thank",      "bye"};
    return s;
}

void CorpusSpec::validate() const {
    if (domains.empty() || intents.empty())
        throw std::invalid_argument("CorpusSpec: domains and intents must be non-empty");
    if (num_dialogues < 1 || entities_per_domain < 1)
        throw std::invalid_argument("CorpusSpec: counts must be positive");
    if (turns_min < 1 || turns_max < turns_min)
        throw std::invalid_argument("CorpusSpec: bad turn bounds");
    for (const auto& d : domains) {
        if (d.slots.empty()) throw std::invalid_argument("CorpusSpec: domain without slots");
        for (const auto& s : d.slots) {
            if (s.values.empty())
                throw std::invalid_argument("CorpusSpec: slot " + s.name + " has no values");
            if (static_cast<int>(s.values.size()) > entities_per_domain)
                throw std::invalid_argument("CorpusSpec: slot " + s.name + " has more values (" +
                                            std::to_string(s.values.size()) +
                                            ") than entities per domain, coverage is infeasible");
        }
    }
}

const DomainSpec* CorpusSpec::domain(const std::string& name) const {
    for (const auto& d : domains)
        if (d.name == name) return &d;
    return nullptr;
}

std::vector<std::string> CorpusSpec::schema_slot_order() const {
    std::vector<std::string> order = {"domain"};
    for (const auto& d : domains)
        for (const auto& s : d.slots)
            if (std::find(order.begin(), order.end(), s.name) == order.end())
                order.push_back(s.name);
    return order;
}

// ---- database ---------------------------------------------------------------

namespace {

std::string make_name(CounterRng& rng) {
    static const char* consonants = "bdfghjklmnprstvwz";
    static const char* vowels = "aeiou";
    std::string name;
    for (int i = 0; i < 3; ++i) {
        name += consonants[rng.next_below(17)];
        name += vowels[rng.next_below(5)];
    }
    return name;
}

bool covers_all_single_queries(const std::vector<DbEntity>& entities, const DomainSpec& domain) {
    for (const auto& slot : domain.slots)
        for (const auto& value : slot.values) {
            bool hit = false;
            for (const auto& e : entities)
                if (const std::string* v = e.attribute(slot.name); v && *v == value) {
                    hit = true;
                    break;
                }
            if (!hit) return false;
        }
    return true;
}

} // namespace

ToyDatabase build_database(const CorpusSpec& spec) {
    spec.validate();
    CounterRng root(spec.seed);
    CounterRng name_rng = root.fork(100);

    std::set<std::string> used_names;
    ToyDatabase db;
    for (std::size_t di = 0; di < spec.domains.size(); ++di) {
        const auto& domain = spec.domains[di];
        CounterRng fill_rng = root.fork(200 + di);

        std::vector<std::string> names;
        int name_attempts = 0;
        while (static_cast<int>(names.size()) < spec.entities_per_domain) {
            if (++name_attempts > spec.entities_per_domain * 1000)
                throw std::invalid_argument("build_database: name inventory too small for " +
                                            std::to_string(spec.entities_per_domain) +
                                            " unique entities");
            std::string n = make_name(name_rng);
            if (used_names.insert(n).second) names.push_back(std::move(n));
        }
        std::sort(names.begin(), names.end());

        // rejection-fill: redraw the whole domain until every (slot, value)
        // single-constraint query has a match
        std::vector<DbEntity> entities;
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 1000)
                throw std::invalid_argument("build_database: cannot cover every slot value with " +
                                            std::to_string(spec.entities_per_domain) + " entities");
            entities.clear();
            for (int i = 0; i < spec.entities_per_domain; ++i) {
                DbEntity e;
                e.domain = domain.name;
                e.name = names[static_cast<std::size_t>(i)];
                e.attributes.emplace_back("domain", domain.name);
                for (const auto& slot : domain.slots)
                    e.attributes.emplace_back(slot.name,
                                              slot.values[fill_rng.next_below(slot.values.size())]);
                std::sort(e.attributes.begin(), e.attributes.end());
                entities.push_back(std::move(e));
            }
            if (covers_all_single_queries(entities, domain)) break;
        }
        for (auto& e : entities) db.entities.push_back(std::move(e));
    }
    return db;
}

// ---- dialogue generation ------------------------------------------------------

namespace {

struct Templates {
    static std::string opener_sys(std::uint64_t variant) {
        static const std::vector<std::string> v = {"hello , how can i help ?",
                                                   "good day , what can i do for you ?",
                                                   "welcome , how may i assist you ?"};
        return v[variant % v.size()];
    }

    static std::string slot_phrase(const std::string& slot, const std::string& value) {
        if (slot == "area") return "in the " + value;
        if (slot == "food") return "serving " + value + " food";
        if (slot == "pricerange") return "in the " + value + " price range";
        if (slot == "stars") return "with " + value + " stars";
        if (slot == "parking") return value == "yes" ? "with free parking" : "without parking";
        return "with " + slot + " " + value;
    }

    // the opener must carry the find/book distinction, or NLU has nothing to
    // recover the intent from
    static std::string opener_usr(std::uint64_t variant, const std::string& domain, bool book) {
        static const std::vector<std::string> find_v = {"i am looking for a ", "i want a ",
                                                        "find me a ", "i need a ",
                                                        "please find a "};
        static const std::vector<std::string> book_v = {"i want to book a ",
                                                        "please book me a ",
                                                        "i would like to reserve a "};
        const auto& v = book ? book_v : find_v;
        return v[variant % v.size()] + domain;
    }

    static std::string continuation(std::uint64_t variant) {
        static const std::vector<std::string> v = {"it should be ", "i would like it ",
                                                   "preferably ", "make sure it is "};
        return v[variant % v.size()];
    }

    static std::string update_usr(const std::string& phrase, std::uint64_t variant) {
        static const std::vector<std::string> v = {"actually , make it ", "sorry , i prefer it ",
                                                   "on second thought , make it "};
        return v[variant % v.size()] + phrase;
    }

    static std::string request_usr(const std::vector<std::string>& slots, std::uint64_t variant) {
        static const std::vector<std::string> v = {"what is the ", "can you tell me the ",
                                                   "could you give me the "};
        std::string out = v[variant % v.size()] + slots[0];
        for (std::size_t i = 1; i < slots.size(); ++i) out += " and the " + slots[i];
        return out + " ?";
    }

    // prompts are a pure function of the visible belief, so responses stay
    // predictable from the dialogue context
    static std::string prompt_sys(const std::string& slot, int turn_index) {
        static const std::vector<std::string> v = {"what %s do you prefer ?",
                                                   "do you have a %s preference ?"};
        std::string t = v[static_cast<std::size_t>(turn_index) % v.size()];
        return t.replace(t.find("%s"), 2, slot);
    }

    static std::string predomain_prompt_sys() { return "what can i help you find ?"; }
    static std::string ack_sys() { return "sure , one moment ."; }

    static std::string greet_usr(std::uint64_t variant) {
        static const std::vector<std::string> v = {"hello", "hi there", "good day"};
        return v[variant % v.size()];
    }
};

std::string chitchat_response(const std::string& user_utterance) {
    if (user_utterance.find("thank") != std::string::npos) return "you are welcome .";
    if (user_utterance.find("goodbye") != std::string::npos ||
        user_utterance.find("bye") != std::string::npos)
        return "goodbye , have a nice day .";
    return "hi , what can i do for you ?";
}

// deterministic system reply after a user turn, given the belief so far
std::string system_reply(const CorpusSpec& spec, const BeliefState& belief, int turn_index) {
    if (belief.empty()) return Templates::predomain_prompt_sys();
    const std::string* domain_name = belief.value_of("domain");
    if (!domain_name) return Templates::predomain_prompt_sys();
    const DomainSpec* domain = spec.domain(*domain_name);
    if (!domain) return Templates::ack_sys();
    for (const auto& slot : domain->slots)
        if (!belief.value_of(slot.name)) return Templates::prompt_sys(slot.name, turn_index);
    return Templates::ack_sys();
}

std::string final_response(const std::string& intent, const DBResult& r,
                           const std::vector<std::string>& requested,
                           const std::vector<std::string>& schema_order) {
    std::string out;
    const std::string count = std::to_string(r.match_count);
    const bool book = intent.rfind("book_", 0) == 0;
    if (r.match_count == 0) {
        out = "i found 0 options .";
    } else if (book) {
        out = "i booked " + *r.top_entity + " for you . " + count + " options were available .";
    } else {
        out = "i found " + count + " options . " + *r.top_entity + " matches .";
    }
    if (r.match_count >= 1) {
        // answer requested slots in schema order
        for (const auto& slot : schema_order) {
            if (std::find(requested.begin(), requested.end(), slot) == requested.end()) continue;
            for (const auto& [s, v] : r.top_attributes)
                if (s == slot) out += " its " + slot + " is " + v + " .";
        }
    }
    return out;
}

AnnotatedDialogue generate_dialogue(const CorpusSpec& spec, const ToyDatabase& db,
                                    std::size_t index, CounterRng rng) {
    AnnotatedDialogue d;
    {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "dlg_%05zu", index);
        d.id = buf;
    }

    const bool chitchat = rng.uniform() < 0.10;
    if (chitchat) {
        const std::uint64_t kind = rng.next_below(3);
        std::string usr, intent;
        if (kind == 0) {
            usr = Templates::greet_usr(rng.next_u64());
            intent = "greet";
        } else if (kind == 1) {
            usr = "thank you .";
            intent = "thank";
        } else {
            usr = "goodbye .";
            intent = "bye";
        }
        d.domain = "";
        d.history.turns = {{Speaker::system, Templates::opener_sys(rng.next_u64())},
                           {Speaker::user, usr}};
        d.turn_intents = {intent};
        d.turn_beliefs = {BeliefState{}};
        d.final_response = chitchat_response(usr);
        return d;
    }

    // task dialogue around an anchor entity, so the final belief always matches
    const auto& domain = spec.domains[rng.next_below(spec.domains.size())];
    d.domain = domain.name;
    const bool book = rng.uniform() < 0.25;
    const std::string intent = (book ? "book_" : "find_") + domain.name;

    std::vector<const DbEntity*> domain_entities;
    for (const auto& e : db.entities)
        if (e.domain == domain.name) domain_entities.push_back(&e);
    const DbEntity& anchor = *domain_entities[rng.next_below(domain_entities.size())];

    const int n_constraints = 2 + static_cast<int>(rng.next_below(
                                      std::min<std::uint64_t>(2, domain.slots.size() - 1)));
    std::vector<std::size_t> slot_order(domain.slots.size());
    std::iota(slot_order.begin(), slot_order.end(), 0);
    for (std::size_t i = slot_order.size(); i > 1; --i)
        std::swap(slot_order[i - 1], slot_order[rng.next_below(i)]);
    slot_order.resize(static_cast<std::size_t>(std::min<int>(n_constraints,
                                                             static_cast<int>(domain.slots.size()))));

    const bool greet = rng.uniform() < 0.10;
    const bool want_update = rng.uniform() < 0.10;
    const bool want_request = rng.uniform() < 0.50;
    int reveal_turns = 1 + static_cast<int>(rng.next_below(2));
    while ((greet ? 1 : 0) + reveal_turns + (want_update ? 1 : 0) + (want_request ? 1 : 0) >
           spec.turns_max)
        --reveal_turns;
    reveal_turns = std::max(reveal_turns, 1);

    // constraint plan: slot -> final (anchor) value; one slot may start wrong
    struct Reveal {
        std::string slot, value;
    };
    std::vector<Reveal> reveals;
    for (std::size_t si : slot_order) {
        const auto& slot = domain.slots[si];
        reveals.push_back({slot.name, *anchor.attribute(slot.name)});
    }
    std::string update_slot, update_final;
    if (want_update) {
        Reveal& victim = reveals[rng.next_below(reveals.size())];
        const auto& slot = *std::find_if(domain.slots.begin(), domain.slots.end(),
                                         [&](const SlotSpec& s) { return s.name == victim.slot; });
        if (slot.values.size() > 1) {
            std::string wrong = victim.value;
            while (wrong == victim.value)
                wrong = slot.values[rng.next_below(slot.values.size())];
            update_slot = victim.slot;
            update_final = victim.value;
            victim.value = wrong;
        }
    }

    BeliefState belief;
    int turn_index = 0;
    const auto push_turn = [&](const std::string& sys, const std::string& usr,
                               const std::string& turn_intent) {
        d.history.turns.push_back({Speaker::system, sys});
        d.history.turns.push_back({Speaker::user, usr});
        d.turn_intents.push_back(turn_intent);
        d.turn_beliefs.push_back(belief);
        ++turn_index;
    };

    std::string next_sys = Templates::opener_sys(rng.next_u64());
    if (greet) {
        push_turn(next_sys, Templates::greet_usr(rng.next_u64()), "greet");
        next_sys = system_reply(spec, belief, turn_index);
    }

    // split reveals across the reveal turns
    const std::size_t per_turn =
        (reveals.size() + static_cast<std::size_t>(reveal_turns) - 1) /
        static_cast<std::size_t>(reveal_turns);
    std::size_t cursor = 0;
    for (int rturn = 0; rturn < reveal_turns && cursor < reveals.size(); ++rturn) {
        std::string usr;
        if (rturn == 0) {
            usr = Templates::opener_usr(rng.next_u64(), domain.name, book);
            belief.set("domain", domain.name);
        } else {
            usr = Templates::continuation(rng.next_u64());
        }
        bool first_phrase = rturn != 0;
        for (std::size_t i = 0; i < per_turn && cursor < reveals.size(); ++i, ++cursor) {
            const auto& reveal = reveals[cursor];
            const std::string phrase = Templates::slot_phrase(reveal.slot, reveal.value);
            if (rturn == 0)
                usr += " " + phrase;
            else
                usr += first_phrase ? phrase : " and " + phrase;
            first_phrase = false;
            belief.set(reveal.slot, reveal.value);
        }
        push_turn(next_sys, usr, intent);
        next_sys = system_reply(spec, belief, turn_index);
    }

    if (!update_slot.empty()) {
        const std::string phrase = Templates::slot_phrase(update_slot, update_final);
        belief.set(update_slot, update_final);
        push_turn(next_sys, Templates::update_usr(phrase, rng.next_u64()), intent);
        next_sys = system_reply(spec, belief, turn_index);
    }

    if (want_request) {
        const int n_req = 1 + static_cast<int>(rng.next_below(2));
        std::vector<std::size_t> req_order(domain.slots.size());
        std::iota(req_order.begin(), req_order.end(), 0);
        for (std::size_t i = req_order.size(); i > 1; --i)
            std::swap(req_order[i - 1], req_order[rng.next_below(i)]);
        for (int i = 0; i < n_req && i < static_cast<int>(req_order.size()); ++i)
            d.requested_slots.push_back(domain.slots[req_order[static_cast<std::size_t>(i)]].name);
        std::sort(d.requested_slots.begin(), d.requested_slots.end());
        push_turn(next_sys, Templates::request_usr(d.requested_slots, rng.next_u64()),
                  "request_info");
    }

    const DBResult r = db_query(belief, db);
    d.final_response = final_response(intent, r, d.requested_slots, spec.schema_slot_order());
    return d;
}

} // namespace

GeneratedCorpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    GeneratedCorpus out;
    out.spec = spec;
    out.db = build_database(spec);

    CounterRng root(spec.seed);
    for (std::size_t i = 0; i < static_cast<std::size_t>(spec.num_dialogues); ++i)
        out.dialogues.push_back(generate_dialogue(spec, out.db, i, root.fork(1000 + i)));

    // 80/10/10 split over shuffled dialogue indices
    std::vector<std::size_t> order(out.dialogues.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng split_rng = root.fork(99);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[split_rng.next_below(i)]);
    const std::size_t n = order.size();
    const std::size_t n_train = (n * 8) / 10;
    const std::size_t n_dev = n / 10;
    out.dialogue_splits.assign(n, "train");
    for (std::size_t i = n_train; i < n_train + n_dev && i < n; ++i)
        out.dialogue_splits[order[i]] = "dev";
    for (std::size_t i = n_train + n_dev; i < n; ++i) out.dialogue_splits[order[i]] = "test";

    for (std::size_t i = 0; i < out.dialogues.size(); ++i) {
        std::vector<DialogueExample>* bucket = &out.train;
        if (out.dialogue_splits[i] == "dev") bucket = &out.dev;
        if (out.dialogue_splits[i] == "test") bucket = &out.test;
        for (Task task : {Task::nlu, Task::dst, Task::nlg})
            for (auto& ex : make_examples(out.dialogues[i], task, out.db))
                bucket->push_back(std::move(ex));
    }

    // closed vocabulary: corpus text plus every entity name and every count a
    // prediction-time query could produce
    std::vector<std::string> texts;
    for (const auto* bucket : {&out.train, &out.dev, &out.test})
        for (const auto& ex : *bucket) {
            texts.push_back(ex.x);
            texts.push_back(ex.y);
        }
    std::vector<std::string> extra;
    for (const auto& e : out.db.entities) extra.push_back(e.name);
    for (int c = 0; c <= out.db.size(); ++c) extra.push_back(std::to_string(c));
    out.vocab = Vocab::build(texts, extra);
    return out;
}

// ---- disk layout ---------------------------------------------------------------

void write_dialogues_jsonl(const std::string& path, std::span<const AnnotatedDialogue> dialogues,
                           std::span<const std::string> splits) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        const auto& d = dialogues[i];
        json turns = json::array();
        for (const auto& t : d.history.turns)
            turns.push_back(json::array({t.speaker == Speaker::system ? "sys" : "usr", t.utterance}));
        json beliefs = json::array();
        for (const auto& b : d.turn_beliefs) {
            json arr = json::array();
            for (const auto& [s, v] : b.pairs) arr.push_back(json::array({s, v}));
            beliefs.push_back(arr);
        }
        json j{{"id", d.id},
               {"domain", d.domain},
               {"turns", turns},
               {"final_response", d.final_response},
               {"turn_intents", d.turn_intents},
               {"turn_beliefs", beliefs},
               {"requested", d.requested_slots},
               {"split", splits.empty() ? "train" : splits[i]}};
        f << j.dump() << "\n";
    }
}

void read_dialogues_jsonl(const std::string& path, std::vector<AnnotatedDialogue>& dialogues,
                          std::vector<std::string>& splits) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        AnnotatedDialogue d;
        d.id = j.at("id");
        d.domain = j.at("domain");
        for (const auto& t : j.at("turns"))
            d.history.turns.push_back(
                {t.at(0) == "sys" ? Speaker::system : Speaker::user, t.at(1)});
        d.final_response = j.at("final_response");
        d.turn_intents = j.at("turn_intents").get<std::vector<std::string>>();
        for (const auto& arr : j.at("turn_beliefs")) {
            BeliefState b;
            for (const auto& pair : arr) b.pairs.emplace_back(pair.at(0), pair.at(1));
            d.turn_beliefs.push_back(std::move(b));
        }
        d.requested_slots = j.at("requested").get<std::vector<std::string>>();
        splits.push_back(j.at("split"));
        dialogues.push_back(std::move(d));
    }
}

void write_corpus(const std::string& dir, const GeneratedCorpus& corpus) {
    std::filesystem::create_directories(dir);
    const auto p = [&](const std::string& name) { return dir + "/" + name; };
    write_database_jsonl(p("db.jsonl"), corpus.db);
    corpus.vocab.save(p("vocab.txt"));
    write_examples_jsonl(p("train.jsonl"), corpus.train);
    write_examples_jsonl(p("dev.jsonl"), corpus.dev);
    write_examples_jsonl(p("test.jsonl"), corpus.test);
    write_dialogues_jsonl(p("dialogues.jsonl"), corpus.dialogues, corpus.dialogue_splits);
}

CorpusOnDisk load_corpus(const std::string& dir) {
    const auto p = [&](const std::string& name) { return dir + "/" + name; };
    CorpusOnDisk c;
    c.db = read_database_jsonl(p("db.jsonl"));
    c.vocab = Vocab::load(p("vocab.txt"));
    c.train = read_examples_jsonl(p("train.jsonl"));
    c.dev = read_examples_jsonl(p("dev.jsonl"));
    c.test = read_examples_jsonl(p("test.jsonl"));
    read_dialogues_jsonl(p("dialogues.jsonl"), c.dialogues, c.dialogue_splits);
    return c;
}

} // namespace smetod

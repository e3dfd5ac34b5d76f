#include "smetod/dialogue.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include "smetod/rng.hpp"

using namespace smetod;

namespace {

ToyDatabase small_db() {
    ToyDatabase db;
    const auto add = [&](const std::string& domain, const std::string& name,
                         std::vector<std::pair<std::string, std::string>> attrs) {
        DbEntity e;
        e.domain = domain;
        e.name = name;
        attrs.emplace_back("domain", domain);
        std::sort(attrs.begin(), attrs.end());
        e.attributes = std::move(attrs);
        db.entities.push_back(std::move(e));
    };
    add("restaurant", "mori", {{"area", "north"}, {"food", "thai"}, {"pricerange", "cheap"}});
    add("restaurant", "beto", {{"area", "north"}, {"food", "thai"}, {"pricerange", "expensive"}});
    add("restaurant", "zuse", {{"area", "south"}, {"food", "italian"}, {"pricerange", "cheap"}});
    add("hotel", "kilo", {{"area", "north"}, {"stars", "4"}, {"parking", "yes"}});
    return db;
}

DialogueHistory one_exchange() {
    return DialogueHistory{{{Speaker::system, "hello"}, {Speaker::user, "find thai food"}}};
}

AnnotatedDialogue fixture_dialogue() {
    AnnotatedDialogue d;
    d.id = "dlg_fix";
    d.domain = "restaurant";
    d.history.turns = {{Speaker::system, "hello , how can i help ?"},
                       {Speaker::user, "i want a restaurant serving thai food"},
                       {Speaker::system, "what area do you prefer ?"},
                       {Speaker::user, "in the north"}};
    BeliefState b1;
    b1.set("domain", "restaurant");
    b1.set("food", "thai");
    BeliefState b2 = b1;
    b2.set("area", "north");
    d.turn_intents = {"find_restaurant", "find_restaurant"};
    d.turn_beliefs = {b1, b2};
    d.final_response = "i found 2 options . beto matches .";
    return d;
}

} // namespace

TEST(History, serialize_one_exchange) {
    EXPECT_EQ(serialize_history(one_exchange()), "[sys] hello [usr] find thai food");
}

TEST(History, round_trip_two_exchanges) {
    DialogueHistory h;
    h.turns = {{Speaker::system, "hello"},
               {Speaker::user, "find thai food"},
               {Speaker::system, "what area ?"},
               {Speaker::user, "in the north please"}};
    const DialogueHistory back = parse_history(serialize_history(h));
    ASSERT_EQ(back.turns.size(), h.turns.size());
    for (std::size_t i = 0; i < h.turns.size(); ++i) {
        EXPECT_EQ(back.turns[i].speaker, h.turns[i].speaker);
        EXPECT_EQ(back.turns[i].utterance, h.turns[i].utterance);
    }
}

TEST(History, reserved_marker_in_utterance_is_format_error) {
    DialogueHistory h = one_exchange();
    h.turns[1].utterance = "find [bs] food";
    EXPECT_THROW(serialize_history(h), std::invalid_argument);
}

TEST(History, alternation_is_validated) {
    DialogueHistory h;
    h.turns = {{Speaker::user, "hi"}, {Speaker::system, "hello"}};
    EXPECT_THROW(h.validate(), std::invalid_argument);
    h.turns = {{Speaker::system, "hello"}};
    EXPECT_THROW(h.validate(), std::invalid_argument);
}

TEST(Belief, linearize_empty_and_two_pairs) {
    EXPECT_EQ(linearize_belief(BeliefState{}), "[bs]");
    BeliefState b;
    b.set("area", "north");
    b.set("food", "thai");
    EXPECT_EQ(linearize_belief(b), "[bs] area = north ; food = thai");
}

TEST(Belief, parse_round_trips_linearize) {
    BeliefState b;
    b.set("domain", "restaurant");
    b.set("area", "north");
    b.set("food", "thai");
    const BeliefState back = parse_belief(linearize_belief(b));
    EXPECT_FALSE(back.malformed);
    EXPECT_TRUE(back == b);
}

TEST(Belief, parse_is_total_on_malformed_text) {
    BeliefState b = parse_belief("area north ; food = thai");
    EXPECT_TRUE(b.malformed); // missing [bs] and a segment without '='
    ASSERT_EQ(b.pairs.size(), 1u);
    EXPECT_EQ(b.pairs[0].first, "food");
    EXPECT_EQ(b.pairs[0].second, "thai");

    BeliefState dup = parse_belief("[bs] area = north ; area = south");
    EXPECT_TRUE(dup.malformed);
    ASSERT_EQ(dup.pairs.size(), 1u);
    EXPECT_EQ(dup.pairs[0].second, "south"); // last occurrence wins

    const BeliefState junk = parse_belief("complete nonsense with no structure");
    EXPECT_TRUE(junk.malformed);
    EXPECT_TRUE(junk.pairs.empty());

    EXPECT_FALSE(parse_belief("[bs]").malformed);
}

TEST(Belief, set_semantics_for_equality) {
    BeliefState a, b;
    a.set("x", "1");
    a.set("y", "2");
    b.set("y", "2");
    b.set("x", "1");
    EXPECT_TRUE(a == b);
    b.set("x", "3");
    EXPECT_FALSE(a == b);
}

TEST(DbQuery, empty_belief_matches_whole_db) {
    const ToyDatabase db = small_db();
    const DBResult r = db_query(BeliefState{}, db);
    EXPECT_EQ(r.match_count, db.size());
    ASSERT_TRUE(r.top_entity.has_value());
    EXPECT_EQ(*r.top_entity, "beto"); // lexicographically smallest

    // against a single-domain section, the count is that section's size
    ToyDatabase restaurants;
    for (const auto& e : db.entities)
        if (e.domain == "restaurant") restaurants.entities.push_back(e);
    EXPECT_EQ(db_query(BeliefState{}, restaurants).match_count, 3);
}

TEST(DbQuery, unsatisfiable_constraint_and_unknown_slot) {
    const ToyDatabase db = small_db();
    BeliefState b;
    b.set("food", "sushi");
    DBResult r = db_query(b, db);
    EXPECT_EQ(r.match_count, 0);
    EXPECT_FALSE(r.top_entity.has_value());

    BeliefState unknown;
    unknown.set("color", "red"); // unknown slots match nothing
    EXPECT_EQ(db_query(unknown, db).match_count, 0);
}

TEST(DbQuery, random_beliefs_match_linear_scan_oracle) {
    const ToyDatabase db = small_db();
    const std::vector<std::string> slots = {"domain", "area", "food", "pricerange", "stars",
                                            "parking"};
    const std::vector<std::string> values = {"restaurant", "hotel", "north", "south", "thai",
                                             "italian",    "cheap", "4",     "yes"};
    CounterRng rng(404);
    for (int trial = 0; trial < 300; ++trial) {
        BeliefState b;
        const int n = static_cast<int>(rng.next_below(3));
        for (int i = 0; i < n; ++i)
            b.set(slots[rng.next_below(slots.size())], values[rng.next_below(values.size())]);

        // oracle: plain linear scan collecting matches
        std::vector<std::string> names;
        for (const auto& e : db.entities) {
            bool ok = true;
            for (const auto& [s, v] : b.pairs) {
                const std::string* have = e.attribute(s);
                if (!have || *have != v) {
                    ok = false;
                    break;
                }
            }
            if (ok) names.push_back(e.name);
        }
        std::sort(names.begin(), names.end());

        const DBResult r = db_query(b, db);
        EXPECT_EQ(r.match_count, static_cast<int>(names.size()));
        if (names.empty())
            EXPECT_FALSE(r.top_entity.has_value());
        else
            EXPECT_EQ(*r.top_entity, names.front());
    }
}

TEST(DbResult, serialization) {
    DBResult none;
    none.match_count = 0;
    EXPECT_EQ(serialize_db_result(none), "[db] count = 0");
    DBResult some;
    some.match_count = 3;
    some.top_entity = "alpha";
    EXPECT_EQ(serialize_db_result(some), "[db] count = 3 ; name = alpha");
}

TEST(MakeExamples, dst_yields_cumulative_beliefs_per_user_turn) {
    const auto d = fixture_dialogue();
    const auto examples = make_examples(d, Task::dst, small_db());
    ASSERT_EQ(examples.size(), 2u);
    EXPECT_EQ(examples[0].y, "[bs] domain = restaurant ; food = thai");
    EXPECT_EQ(examples[1].y, "[bs] domain = restaurant ; food = thai ; area = north");
    EXPECT_EQ(examples[0].x, "[sys] hello , how can i help ? [usr] i want a restaurant serving thai food");
}

TEST(MakeExamples, nlu_targets_are_bare_intents) {
    const auto examples = make_examples(fixture_dialogue(), Task::nlu, small_db());
    ASSERT_EQ(examples.size(), 2u);
    EXPECT_EQ(examples[0].y, "find_restaurant");
    EXPECT_EQ(examples[1].y, "find_restaurant");
}

TEST(MakeExamples, nlg_inputs_append_gold_db_state) {
    const auto d = fixture_dialogue();
    const auto examples = make_examples(d, Task::nlg, small_db());
    ASSERT_EQ(examples.size(), 2u);
    // mid-dialogue response comes from the following system turn
    EXPECT_EQ(examples[0].y, "what area do you prefer ?");
    EXPECT_EQ(examples[1].y, d.final_response);
    const DBResult r1 = db_query(d.turn_beliefs[0], small_db());
    EXPECT_EQ(examples[0].x,
              serialize_history({{d.history.turns[0], d.history.turns[1]}}) + " " +
                  serialize_db_result(r1));
    // final-turn input is grounded in the final belief's DB result
    const DBResult r2 = db_query(d.turn_beliefs[1], small_db());
    EXPECT_EQ(examples[1].x, serialize_history(d.history) + " " + serialize_db_result(r2));
}

TEST(MakeExamples, missing_gold_annotation_is_corpus_error) {
    AnnotatedDialogue d = fixture_dialogue();
    d.turn_intents.pop_back();
    EXPECT_THROW(make_examples(d, Task::nlu, small_db()), std::runtime_error);
    d = fixture_dialogue();
    d.final_response.clear();
    EXPECT_THROW(make_examples(d, Task::nlg, small_db()), std::runtime_error);
}

TEST(EndToEnd, gold_belief_stub_reproduces_training_input) {
    const auto d = fixture_dialogue();
    const ToyDatabase db = small_db();
    const auto nlg_examples = make_examples(d, Task::nlg, db);

    const TextModel oracle_dst = [&](const std::string&) {
        return linearize_belief(d.turn_beliefs.back());
    };
    std::string seen_input;
    const TextModel stub_nlg = [&](const std::string& x) {
        seen_input = x;
        return std::string("stub response");
    };
    const InferTrace trace = end_to_end_infer(d.history, oracle_dst, stub_nlg, db);
    EXPECT_EQ(trace.nlg_input, nlg_examples.back().x); // byte-for-byte
    EXPECT_FALSE(trace.belief_malformed);
    EXPECT_EQ(seen_input, trace.nlg_input);
    EXPECT_EQ(trace.response, "stub response");
}

TEST(EndToEnd, zero_match_belief_grounds_count_zero) {
    const ToyDatabase db = small_db();
    const TextModel dst = [](const std::string&) { return "[bs] food = sushi"; };
    const TextModel nlg = [](const std::string&) { return "sorry , nothing found ."; };
    const InferTrace trace = end_to_end_infer(one_exchange(), dst, nlg, db);
    EXPECT_EQ(trace.db_result.match_count, 0);
    EXPECT_NE(trace.nlg_input.find("count = 0"), std::string::npos);
}

TEST(EndToEnd, malformed_belief_degrades_gracefully) {
    const ToyDatabase db = small_db();
    const TextModel dst = [](const std::string&) { return "total garbage ; food = thai"; };
    const TextModel nlg = [](const std::string&) { return "ok"; };
    const InferTrace trace = end_to_end_infer(one_exchange(), dst, nlg, db);
    EXPECT_TRUE(trace.belief_malformed);
    EXPECT_EQ(trace.db_result.match_count, 2); // the parsed subset still queries
}

TEST(EndToEnd, identical_inputs_give_identical_traces) {
    const ToyDatabase db = small_db();
    const TextModel dst = [](const std::string&) { return "[bs] domain = restaurant"; };
    const TextModel nlg = [](const std::string& x) { return "echo " + std::to_string(x.size()); };
    const InferTrace a = end_to_end_infer(one_exchange(), dst, nlg, db);
    const InferTrace b = end_to_end_infer(one_exchange(), dst, nlg, db);
    EXPECT_EQ(a.nlg_input, b.nlg_input);
    EXPECT_EQ(a.response, b.response);
    EXPECT_EQ(a.db_result.match_count, b.db_result.match_count);
}

TEST(Files, examples_jsonl_round_trip) {
    const auto d = fixture_dialogue();
    auto examples = make_examples(d, Task::dst, small_db());
    examples[0].gold.requested_slots = {"area"};
    const std::string path = "/tmp/smetod_test_examples.jsonl";
    write_examples_jsonl(path, examples);
    const auto back = read_examples_jsonl(path);
    ASSERT_EQ(back.size(), examples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].x, examples[i].x);
        EXPECT_EQ(back[i].y, examples[i].y);
        EXPECT_TRUE(back[i].gold.belief == examples[i].gold.belief);
        EXPECT_EQ(back[i].gold.requested_slots, examples[i].gold.requested_slots);
        EXPECT_EQ(back[i].turn_id, examples[i].turn_id);
    }
}

TEST(Files, database_jsonl_round_trip) {
    const ToyDatabase db = small_db();
    const std::string path = "/tmp/smetod_test_db.jsonl";
    write_database_jsonl(path, db);
    const ToyDatabase back = read_database_jsonl(path);
    ASSERT_EQ(back.size(), db.size());
    for (int i = 0; i < db.size(); ++i) {
        EXPECT_EQ(back.entities[static_cast<std::size_t>(i)].name,
                  db.entities[static_cast<std::size_t>(i)].name);
        EXPECT_EQ(back.entities[static_cast<std::size_t>(i)].attributes,
                  db.entities[static_cast<std::size_t>(i)].attributes);
    }
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smetod/dialogue.hpp"
#include "smetod/vocab.hpp"

namespace smetod {

struct SlotSpec {
    std::string name;
    std::vector<std::string> values;
};

struct DomainSpec {
    std::string name;
    std::vector<SlotSpec> slots;
};

struct CorpusSpec {
    std::vector<DomainSpec> domains;
    std::vector<std::string> intents;
    int num_dialogues = 2000;
    int turns_min = 1;
    int turns_max = 4;
    int entities_per_domain = 50;
    std::uint64_t seed = 7;

    static CorpusSpec defaults();
    void validate() const;
    const DomainSpec* domain(const std::string& name) const;
    // canonical slot order: "domain" first, then slots in declaration order
    std::vector<std::string> schema_slot_order() const;
};

struct GeneratedCorpus {
    CorpusSpec spec;
    ToyDatabase db;
    std::vector<AnnotatedDialogue> dialogues;
    std::vector<std::string> dialogue_splits; // train | dev | test, aligned with dialogues
    std::vector<DialogueExample> train, dev, test;
    Vocab vocab;
};

// Deterministic given spec.seed; every single (slot, value) query has at least
// one matching entity.
ToyDatabase build_database(const CorpusSpec& spec);

GeneratedCorpus generate_corpus(const CorpusSpec& spec);

// db.jsonl, vocab.txt, {train,dev,test}.jsonl, dialogues.jsonl under dir.
void write_corpus(const std::string& dir, const GeneratedCorpus& corpus);

struct CorpusOnDisk {
    ToyDatabase db;
    Vocab vocab;
    std::vector<DialogueExample> train, dev, test;
    std::vector<AnnotatedDialogue> dialogues;
    std::vector<std::string> dialogue_splits;
};

CorpusOnDisk load_corpus(const std::string& dir);

void write_dialogues_jsonl(const std::string& path, std::span<const AnnotatedDialogue> dialogues,
                           std::span<const std::string> splits);
void read_dialogues_jsonl(const std::string& path, std::vector<AnnotatedDialogue>& dialogues,
                          std::vector<std::string>& splits);

} // namespace smetod

#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "smetod/corpus.hpp"
#include "smetod/transformer.hpp"

namespace smetod {

// ---- timing harness ----------------------------------------------------------

struct LatencyStats {
    double median_ns = 0.0;
    double p10_ns = 0.0;
    double p90_ns = 0.0;
    int repeats = 0;
    int warmup = 0;
};

// Test hook bracketing each timed sample; the harness itself performs no
// allocation between enter and leave.
struct RegionHooks {
    std::function<void()> enter, leave;
};

// Runs `warmup` discarded iterations, then `repeats` timed ones on the calling
// thread. Throws when the steady clock is coarser than 1us.
LatencyStats measure_latency(const std::function<void()>& fn, int repeats, int warmup,
                             const RegionHooks* hooks = nullptr);

// ---- reports -------------------------------------------------------------------

struct BenchRow {
    int m = 0;
    int p = 0;
    int total_slots = 0;
    std::int64_t parameter_count = 0;
    double median_latency_ns = 0.0;
    double p10_ns = 0.0;
    double p90_ns = 0.0;
    int repeats = 0;
    double jga = -1.0; // < 0 when not applicable
    std::string status = "ok";
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::string to_csv() const; // schema: docs/formats.md
};

// ---- studies -------------------------------------------------------------------

struct LatencyBenchSpec {
    ModelConfig base;       // shared (l, d, d_ff, layers); m and p come from the grid
    std::vector<std::pair<int, int>> grid; // (experts, slots_per_expert)
    int input_len = 64;
    int repeats = 30;
    int warmup = 5;
    std::uint64_t seed = 7;
};

// Median encoder-forward latency and parameter count per grid point,
// single-threaded on a fixed seeded input batch.
BenchReport bench_latency(const LatencyBenchSpec& spec);

struct AblationSpec {
    CorpusSpec corpus;
    ModelConfig base;                       // DST model; experts/slots overridden per point
    std::vector<int> expert_grid = {2, 4, 8, 16, 32};
    int total_slots = 32;
    TrainConfig train;
    std::uint64_t seed = 7;
};

// Trains one tiny DST model per expert count at a fixed slot total and
// records dev JGA. A diverged point becomes a "failed" row; the sweep
// continues.
BenchReport ablation_run(const AblationSpec& spec, std::ostream* progress = nullptr);

struct PadStudyRow {
    int batch_size = 0;
    double max_logit_delta = 0.0; // vs the batch-size-1 reference
    int changed_decodes = 0;
    double jga = 0.0;
};

struct PadStudyReport {
    bool masked_mode = true;
    std::vector<PadStudyRow> rows;
    double average_jga = 0.0;
    std::string to_csv() const;
};

// Batches the DST eval set at several sizes, padding each batch to its longest
// sequence, and compares per-example outputs against the batch-size-1 run.
PadStudyReport padding_sensitivity_study(const Seq2SeqModel& model, const Vocab& vocab,
                                         std::span<const DialogueExample> dst_examples,
                                         std::span<const int> batch_sizes);

} // namespace smetod

#include "smetod/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "smetod/harness.hpp"
#include "smetod/rng.hpp"

namespace smetod {

namespace {

double percentile(std::vector<double> sorted, double q) {
    const auto n = sorted.size();
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

} // namespace

LatencyStats measure_latency(const std::function<void()>& fn, int repeats, int warmup,
                             const RegionHooks* hooks) {
    using clock = std::chrono::steady_clock;
    static_assert(clock::is_steady);
    if (repeats < 1 || warmup < 0) throw std::invalid_argument("measure_latency: bad counts");
    constexpr double tick_ns =
        1e9 * static_cast<double>(clock::period::num) / static_cast<double>(clock::period::den);
    if (tick_ns > 1000.0)
        throw std::runtime_error("measure_latency: steady clock tick is coarser than 1us");

    for (int i = 0; i < warmup; ++i) fn();

    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(repeats));
    for (int i = 0; i < repeats; ++i) {
        if (hooks && hooks->enter) hooks->enter();
        const auto t0 = clock::now();
        fn();
        const auto t1 = clock::now();
        if (hooks && hooks->leave) hooks->leave();
        samples.push_back(
            static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }
    std::sort(samples.begin(), samples.end());
    LatencyStats s;
    s.repeats = repeats;
    s.warmup = warmup;
    s.median_ns = percentile(samples, 0.5);
    s.p10_ns = percentile(samples, 0.1);
    s.p90_ns = percentile(samples, 0.9);
    return s;
}

std::string BenchReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "m,p,total_slots,parameter_count,median_latency_ns,p10_ns,p90_ns,repeats,jga,status\n";
    for (const auto& r : rows) {
        os << r.m << "," << r.p << "," << r.total_slots << "," << r.parameter_count << ","
           << r.median_latency_ns << "," << r.p10_ns << "," << r.p90_ns << "," << r.repeats << ",";
        if (r.jga >= 0.0) os << r.jga;
        os << "," << r.status << "\n";
    }
    return os.str();
}

BenchReport bench_latency(const LatencyBenchSpec& spec) {
    if (spec.repeats < 30)
        throw std::invalid_argument("bench_latency: at least 30 repeats required");
    if (spec.warmup < 5) throw std::invalid_argument("bench_latency: at least 5 warmup runs");
    if (spec.grid.empty()) throw std::invalid_argument("bench_latency: empty grid");
    if (spec.input_len > spec.base.max_len)
        throw std::invalid_argument("bench_latency: input_len exceeds max_len");

    // one fixed input batch shared by every config
    CounterRng rng(spec.seed);
    std::vector<int> input(static_cast<std::size_t>(spec.input_len));
    for (auto& id : input)
        id = 3 + static_cast<int>(rng.next_below(
                     static_cast<std::uint64_t>(spec.base.vocab_size - 3)));

    BenchReport report;
    for (const auto& [m, p] : spec.grid) {
        ModelConfig config = spec.base;
        config.moe_experts = m;
        config.moe_slots_per_expert = p;
        Seq2SeqModel model = Seq2SeqModel::build(config, spec.seed);

        const auto stats = measure_latency([&] { (void)model.encode(input); }, spec.repeats,
                                           spec.warmup);
        BenchRow row;
        row.m = m;
        row.p = p;
        row.total_slots = m * p;
        row.parameter_count = model.parameter_count();
        row.median_latency_ns = stats.median_ns;
        row.p10_ns = stats.p10_ns;
        row.p90_ns = stats.p90_ns;
        row.repeats = stats.repeats;
        report.rows.push_back(row);
    }
    return report;
}

BenchReport ablation_run(const AblationSpec& spec, std::ostream* progress) {
    if (spec.expert_grid.empty()) throw std::invalid_argument("ablation_run: empty grid");
    for (int m : spec.expert_grid)
        if (m < 1 || spec.total_slots % m != 0)
            throw std::invalid_argument("ablation_run: expert count " + std::to_string(m) +
                                        " does not divide total slots " +
                                        std::to_string(spec.total_slots));

    GeneratedCorpus corpus = generate_corpus(spec.corpus);
    const auto train_pairs = tokenize_examples(corpus.vocab, corpus.train, Task::dst);

    BenchReport report;
    for (int m : spec.expert_grid) {
        ModelConfig config = spec.base;
        config.vocab_size = corpus.vocab.size();
        config.moe_experts = m;
        config.moe_slots_per_expert = spec.total_slots / m;

        BenchRow row;
        row.m = m;
        row.p = config.moe_slots_per_expert;
        row.total_slots = spec.total_slots;
        row.repeats = 0;
        if (progress)
            *progress << "ablate: training m=" << m << " p=" << row.p << " ..." << std::endl;
        try {
            Seq2SeqModel model = Seq2SeqModel::build(config, spec.seed);
            row.parameter_count = model.parameter_count();
            (void)train(model, train_pairs, spec.train);
            row.jga = evaluate_dst(model, corpus.vocab, corpus.dev).score;
        } catch (const TrainDivergedError& e) {
            row.status = "failed";
            row.jga = -1.0;
            if (progress) *progress << "ablate: m=" << m << " diverged: " << e.what() << std::endl;
        }
        if (progress && row.status == "ok")
            *progress << "ablate: m=" << m << " jga=" << row.jga << std::endl;
        report.rows.push_back(row);
    }
    return report;
}

std::string PadStudyReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "batch_size,max_logit_delta,changed_decodes,jga,masked_mode\n";
    for (const auto& r : rows)
        os << r.batch_size << "," << r.max_logit_delta << "," << r.changed_decodes << "," << r.jga
           << "," << (masked_mode ? 1 : 0) << "\n";
    return os.str();
}

PadStudyReport padding_sensitivity_study(const Seq2SeqModel& model, const Vocab& vocab,
                                         std::span<const DialogueExample> dst_examples,
                                         std::span<const int> batch_sizes) {
    std::vector<const DialogueExample*> examples;
    for (const auto& ex : dst_examples)
        if (ex.task == Task::dst) examples.push_back(&ex);
    if (examples.empty())
        throw std::invalid_argument("padding_sensitivity_study: no DST examples");

    PadStudyReport report;
    report.masked_mode = model.config().moe_masked_softmax;

    struct PerExample {
        std::vector<double> logits; // first decoder step
        std::string decoded;
        BeliefState belief;
    };
    const int start_token = model.config().pad_id;
    const int decode_budget = std::min(48, model.config().max_len);

    const auto run_example = [&](const DialogueExample& ex, std::size_t pad_to) -> PerExample {
        std::vector<int> ids = vocab.encode(ex.x);
        const std::size_t real = ids.size();
        const std::size_t padded = std::max(pad_to, real);
        ids.resize(padded, Vocab::kPad);
        std::vector<double> mask(padded, 1.0);
        for (std::size_t k = real; k < padded; ++k) mask[k] = 0.0;

        const Tensor enc = model.encode(ids, mask);
        const std::vector<int> start = {start_token};
        const Tensor logits0 = model.decode(enc, mask, start);
        const std::vector<int> out = model.greedy_decode(ids, decode_budget, mask);
        PerExample r;
        r.logits.assign(logits0.values().begin(), logits0.values().end());
        r.decoded = vocab.decode(out);
        r.belief = parse_belief(r.decoded);
        return r;
    };

    // batch-size-1 reference: no padding at all
    std::vector<PerExample> reference;
    reference.reserve(examples.size());
    for (const auto* ex : examples) reference.push_back(run_example(*ex, 0));

    for (int batch_size : batch_sizes) {
        if (batch_size < 1)
            throw std::invalid_argument("padding_sensitivity_study: bad batch size");
        PadStudyRow row;
        row.batch_size = batch_size;
        std::vector<BeliefState> preds, golds;

        for (std::size_t begin = 0; begin < examples.size();
             begin += static_cast<std::size_t>(batch_size)) {
            const std::size_t end =
                std::min(begin + static_cast<std::size_t>(batch_size), examples.size());
            std::size_t max_len = 0;
            for (std::size_t i = begin; i < end; ++i)
                max_len = std::max(max_len, vocab.encode(examples[i]->x).size());
            for (std::size_t i = begin; i < end; ++i) {
                const PerExample got = run_example(*examples[i], max_len);
                preds.push_back(got.belief);
                golds.push_back(examples[i]->gold.belief);
                const PerExample& ref = reference[i];
                double delta = 0.0;
                for (std::size_t k = 0; k < ref.logits.size(); ++k)
                    delta = std::max(delta, std::abs(ref.logits[k] - got.logits[k]));
                row.max_logit_delta = std::max(row.max_logit_delta, delta);
                if (got.decoded != ref.decoded) ++row.changed_decodes;
            }
        }
        row.jga = joint_goal_accuracy(preds, golds);
        report.rows.push_back(row);
    }

    double total = 0.0;
    for (const auto& r : report.rows) total += r.jga;
    report.average_jga = total / static_cast<double>(report.rows.size());
    return report;
}

} // namespace smetod

// smetod: soft mixture-of-experts task-oriented dialogue workbench.
//
// Subcommands: gen-corpus | train | eval | infer | bench | ablate | pad-study.
// Every key in the config file is mirrored by a flag of the same dotted name;
// flags override the file. Each run writes a manifest beside its outputs that
// reproduces the run when passed back via --config.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "smetod/bench.hpp"
#include "smetod/config.hpp"
#include "smetod/corpus.hpp"
#include "smetod/harness.hpp"
#include "smetod/metrics.hpp"
#include "smetod/transformer.hpp"

namespace {

using namespace smetod;

constexpr const char* kVersion = "0.1.0";

struct KeySpec {
    const char* key;
    const char* fallback;
    const char* help;
};

// every config key, its default, and its help line; all mirrored as flags
const std::vector<KeySpec>& key_registry() {
    static const std::vector<KeySpec> keys = {
        {"seed", "7", "random seed for the run"},
        {"out", "out", "output directory"},
        {"corpus.dialogues", "2000", "number of dialogues to generate"},
        {"corpus.turns_min", "1", "minimum user turns per dialogue"},
        {"corpus.turns_max", "4", "maximum user turns per dialogue"},
        {"corpus.entities_per_domain", "50", "database entities per domain"},
        {"model.d_model", "64", "hidden width"},
        {"model.d_ff", "128", "feed-forward width"},
        {"model.encoder_layers", "2", "encoder blocks"},
        {"model.decoder_layers", "2", "decoder blocks"},
        {"model.heads", "4", "attention heads"},
        {"model.max_len", "128", "maximum sequence length"},
        {"model.experts", "4", "soft-MoE experts per encoder block"},
        {"model.slots_per_expert", "2", "slots per expert"},
        {"model.masked_softmax", "true", "exclude padding from MoE softmaxes"},
        {"model.dropout", "0.1", "training dropout rate"},
        {"model.arch", "moe", "encoder variant: moe | dense (upcycling donor)"},
        {"train.task", "dst", "task to train: nlu | dst | nlg"},
        {"train.steps", "", "optimizer steps (default depends on task)"},
        {"train.batch_size", "8", "examples per optimizer step"},
        {"train.lr", "", "learning rate (default 1e-3 for nlu, 1e-4 for dst/nlg)"},
        {"train.init_from", "", "dense donor checkpoint to upcycle from"},
        {"eval.split", "dev", "corpus split to evaluate: train | dev | test"},
        {"eval.max_new_tokens", "48", "generation budget per example"},
        {"bench.experts", "2,32", "comma list of expert counts"},
        {"bench.slots", "", "comma list of slots per expert (paired with experts)"},
        {"bench.slots_total", "32", "fixed total slots when bench.slots is empty"},
        {"bench.repeats", "30", "timed repetitions per config"},
        {"bench.warmup", "5", "discarded warmup runs per config"},
        {"bench.input_len", "64", "tokens in the timed input"},
        {"bench.vocab", "256", "synthetic vocabulary size for timing models"},
        {"ablate.experts", "2,4,8,16,32", "expert counts for the sweep"},
        {"ablate.slots_total", "32", "fixed total slots for the sweep"},
        {"ablate.dialogues", "300", "corpus size for the sweep"},
        {"ablate.entities_per_domain", "20", "database entities per domain for the sweep"},
        {"ablate.steps", "400", "training steps per grid point"},
        {"ablate.batch_size", "8", "batch size per grid point"},
        {"ablate.lr", "0.001", "learning rate for the sweep"},
        {"ablate.d_model", "32", "hidden width of the sweep model"},
        {"ablate.d_ff", "64", "feed-forward width of the sweep model"},
        {"pad.batch_sizes", "1,4,16,64", "batch sizes for the padding study"},
        {"pad.max_examples", "48", "cap on evaluated examples"},
    };
    return keys;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    return out;
}

struct CommonArgs {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

// --config plus one mirrored flag per registry key
void add_config_flags(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (key = value with [sections])");
    for (const auto& spec : key_registry()) {
        const std::string name = "--" + std::string(spec.key);
        cmd->add_option_function<std::string>(
            name,
            [&args, key = std::string(spec.key)](const std::string& v) {
                args.overrides[key] = v;
            },
            spec.help);
    }
}

Config effective_config(const CommonArgs& args) {
    Config c;
    for (const auto& spec : key_registry())
        if (spec.fallback[0] != '\0') c.set(spec.key, spec.fallback);
    if (!args.config_path.empty()) {
        const Config file = Config::load_file(args.config_path);
        for (const auto& [k, v] : file.values()) c.set(k, v);
    }
    for (const auto& [k, v] : args.overrides) c.set(k, v);
    return c;
}

void write_manifest(const Config& config, const std::string& out_dir, const std::string& command) {
    Config manifest = config;
    manifest.set("run.version", kVersion);
    manifest.set("run.command", command);
    std::filesystem::create_directories(out_dir);
    std::ofstream f(out_dir + "/manifest.txt", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + out_dir + "/manifest.txt");
    f << manifest.canonical_text();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

CorpusSpec corpus_spec_from(const Config& c) {
    CorpusSpec spec = CorpusSpec::defaults();
    spec.num_dialogues = c.get_int("corpus.dialogues", 2000);
    spec.turns_min = c.get_int("corpus.turns_min", 1);
    spec.turns_max = c.get_int("corpus.turns_max", 4);
    spec.entities_per_domain = c.get_int("corpus.entities_per_domain", 50);
    spec.seed = c.get_u64("seed", 7);
    return spec;
}

ModelConfig model_config_from(const Config& c, int vocab_size) {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.d_model = c.get_int("model.d_model", 64);
    m.d_ff = c.get_int("model.d_ff", 128);
    m.num_encoder_layers = c.get_int("model.encoder_layers", 2);
    m.num_decoder_layers = c.get_int("model.decoder_layers", 2);
    m.num_heads = c.get_int("model.heads", 4);
    m.max_len = c.get_int("model.max_len", 128);
    m.moe_experts = c.get_int("model.experts", 4);
    m.moe_slots_per_expert = c.get_int("model.slots_per_expert", 2);
    m.moe_masked_softmax = c.get_bool("model.masked_softmax", true);
    m.dropout_rate = c.get_double("model.dropout", 0.1);
    m.dense_encoder_ffn = c.get_string("model.arch", "moe") == "dense";
    m.pad_id = Vocab::kPad;
    m.eos_id = Vocab::kEos;
    return m;
}

struct LoadedModel {
    Seq2SeqModel model;
    Vocab vocab;
};

// checkpoint layout: <dir>/model.bin + <dir>/vocab.txt, or a direct .bin path
// with vocab.txt beside it
LoadedModel load_model(const std::string& path) {
    std::string model_path = path, vocab_path;
    if (std::filesystem::is_directory(path)) {
        model_path = path + "/model.bin";
        vocab_path = path + "/vocab.txt";
    } else {
        vocab_path = (std::filesystem::path(path).parent_path() / "vocab.txt").string();
    }
    LoadedModel out{Seq2SeqModel::load(model_path), Vocab::load(vocab_path)};
    if (out.vocab.size() != out.model.config().vocab_size)
        throw std::runtime_error("vocab " + vocab_path + " has " +
                                 std::to_string(out.vocab.size()) + " tokens, checkpoint wants " +
                                 std::to_string(out.model.config().vocab_size));
    return out;
}

int default_steps(Task task) { return task == Task::nlu ? 600 : 1200; }
double default_lr(Task task) { return task == Task::nlu ? 1e-3 : 1e-4; }

// ---- subcommand bodies --------------------------------------------------------

int run_gen_corpus(const Config& config) {
    const std::string out = config.get_string("out", "out");
    const GeneratedCorpus corpus = generate_corpus(corpus_spec_from(config));
    write_corpus(out, corpus);
    write_manifest(config, out, "gen-corpus");
    std::cout << "wrote " << corpus.dialogues.size() << " dialogues, vocab "
              << corpus.vocab.size() << ", db " << corpus.db.size() << " entities to " << out
              << "\n";
    return 0;
}

int run_train(const Config& config, const std::string& corpus_dir) {
    const std::string out = config.get_string("out", "out");
    const Task task = task_from_name(config.get_string("train.task", "dst"));
    const CorpusOnDisk corpus = load_corpus(corpus_dir);

    ModelConfig mc = model_config_from(config, corpus.vocab.size());
    Seq2SeqModel model = Seq2SeqModel::build(mc, config.get_u64("seed", 7));
    const std::string donor = config.get_string("train.init_from", "");
    if (!donor.empty()) model.upcycle_from_dense_checkpoint(donor, config.get_u64("seed", 7));

    TrainConfig tc;
    tc.steps = config.get_string("train.steps", "").empty() ? default_steps(task)
                                                            : config.get_int("train.steps", 0);
    tc.batch_size = config.get_int("train.batch_size", 8);
    tc.lr = config.get_string("train.lr", "").empty() ? default_lr(task)
                                                      : config.get_double("train.lr", 0.0);
    tc.seed = config.get_u64("seed", 7);

    const auto pairs = tokenize_examples(corpus.vocab, corpus.train, task);
    if (pairs.empty()) throw std::runtime_error("no " + task_name(task) + " training examples");
    std::cout << "training " << task_name(task) << ": " << pairs.size() << " examples, "
              << tc.steps << " steps, lr " << tc.lr << std::endl;
    const TrainLog log = train(model, pairs, tc);

    std::filesystem::create_directories(out);
    model.save(out + "/model.bin");
    corpus.vocab.save(out + "/vocab.txt");
    std::ostringstream csv;
    csv << "step,loss,grad_norm,lr\n";
    csv.precision(10);
    for (const auto& s : log.steps)
        csv << s.step << "," << s.loss << "," << s.grad_norm << "," << s.lr << "\n";
    write_text(out + "/train_log.csv", csv.str());
    write_manifest(config, out, "train");
    std::cout << "final loss " << log.final_loss << ", checkpoint " << out << "/model.bin\n";
    return 0;
}

std::vector<DialogueExample> split_examples(const CorpusOnDisk& corpus, const std::string& split) {
    if (split == "train") return corpus.train;
    if (split == "dev") return corpus.dev;
    if (split == "test") return corpus.test;
    throw std::runtime_error("unknown split '" + split + "' (want train|dev|test)");
}

int run_eval(const Config& config, const std::string& corpus_dir, const std::string& checkpoint,
             const std::string& dst_checkpoint) {
    const std::string out = config.get_string("out", "out");
    const Task task = task_from_name(config.get_string("train.task", "dst"));
    const std::string split = config.get_string("eval.split", "dev");
    const CorpusOnDisk corpus = load_corpus(corpus_dir);
    const LoadedModel loaded = load_model(checkpoint);

    EvalReport report;
    if (task == Task::nlu) {
        const auto r = evaluate_nlu(loaded.model, loaded.vocab, split_examples(corpus, split));
        report = EvalReport::from_scores(r.score, 0, 0, 0, 0);
        report.records = r.records;
    } else if (task == Task::dst) {
        const auto r = evaluate_dst(loaded.model, loaded.vocab, split_examples(corpus, split));
        report = EvalReport::from_scores(0, r.score, 0, 0, 0);
        report.records = r.records;
    } else {
        std::optional<LoadedModel> dst;
        if (!dst_checkpoint.empty()) dst.emplace(load_model(dst_checkpoint));
        report = evaluate_end_to_end(dst ? &dst->model : nullptr, loaded.model, loaded.vocab,
                                     corpus.dialogues, corpus.dialogue_splits, split, corpus.db);
    }

    std::filesystem::create_directories(out);
    write_text(out + "/report.csv", report.to_csv());
    write_text(out + "/report.txt", report.to_text());
    {
        std::ofstream f(out + "/records.jsonl", std::ios::trunc);
        for (const auto& rec : report.records) {
            nlohmann::json j{{"id", rec.id},
                             {"pred", rec.pred},
                             {"gold", rec.gold},
                             {"correct", rec.correct}};
            f << j.dump() << "\n";
        }
    }
    write_manifest(config, out, "eval");
    std::cout << report.to_text();
    return 0;
}

int run_infer(const Config& config, const std::string& corpus_dir, const std::string& checkpoint,
              const std::string& dst_checkpoint, const std::string& history_text) {
    const std::string out = config.get_string("out", "out");
    const CorpusOnDisk corpus = load_corpus(corpus_dir);
    const LoadedModel nlg = load_model(checkpoint);
    const LoadedModel dst = load_model(dst_checkpoint);

    const DialogueHistory history = parse_history(history_text);
    const int budget = config.get_int("eval.max_new_tokens", 48);
    const InferTrace trace =
        end_to_end_infer(history, make_text_model(dst.model, dst.vocab, budget),
                         make_text_model(nlg.model, nlg.vocab, budget), corpus.db);

    nlohmann::json j{{"belief", linearize_belief(trace.belief)},
                     {"belief_malformed", trace.belief_malformed},
                     {"db", serialize_db_result(trace.db_result)},
                     {"nlg_input", trace.nlg_input},
                     {"response", trace.response}};
    std::filesystem::create_directories(out);
    write_text(out + "/trace.json", j.dump(2) + "\n");
    write_manifest(config, out, "infer");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_bench(const Config& config) {
    const std::string out = config.get_string("out", "out");
    LatencyBenchSpec spec;
    spec.base = model_config_from(config, config.get_int("bench.vocab", 256));
    spec.base.dropout_rate = 0.0;
    spec.input_len = config.get_int("bench.input_len", 64);
    spec.repeats = config.get_int("bench.repeats", 30);
    spec.warmup = config.get_int("bench.warmup", 5);
    spec.seed = config.get_u64("seed", 7);

    const auto experts = parse_int_list(config.get_string("bench.experts", "2,32"));
    const auto slots = parse_int_list(config.get_string("bench.slots", ""));
    const int total = config.get_int("bench.slots_total", 32);
    for (std::size_t i = 0; i < experts.size(); ++i) {
        int p;
        if (!slots.empty()) {
            if (slots.size() != experts.size())
                throw std::runtime_error("bench.slots must pair with bench.experts");
            p = slots[i];
        } else {
            if (total % experts[i] != 0)
                throw std::runtime_error("expert count " + std::to_string(experts[i]) +
                                         " does not divide slots_total " + std::to_string(total));
            p = total / experts[i];
        }
        spec.grid.emplace_back(experts[i], p);
    }

    const BenchReport report = bench_latency(spec);
    std::filesystem::create_directories(out);
    write_text(out + "/bench.csv", report.to_csv());
    write_manifest(config, out, "bench");
    std::cout << report.to_csv();
    return 0;
}

int run_ablate(const Config& config) {
    const std::string out = config.get_string("out", "out");
    AblationSpec spec;
    spec.corpus = CorpusSpec::defaults();
    spec.corpus.num_dialogues = config.get_int("ablate.dialogues", 300);
    spec.corpus.entities_per_domain = config.get_int("ablate.entities_per_domain", 20);
    spec.corpus.seed = config.get_u64("seed", 7);
    spec.total_slots = config.get_int("ablate.slots_total", 32);
    spec.expert_grid = parse_int_list(config.get_string("ablate.experts", "2,4,8,16,32"));
    spec.seed = config.get_u64("seed", 7);

    spec.base = model_config_from(config, 1);
    spec.base.d_model = config.get_int("ablate.d_model", 32);
    spec.base.d_ff = config.get_int("ablate.d_ff", 64);
    spec.base.vocab_size = 1; // filled from the generated corpus per grid point

    spec.train.steps = config.get_int("ablate.steps", 400);
    spec.train.batch_size = config.get_int("ablate.batch_size", 8);
    spec.train.lr = config.get_double("ablate.lr", 1e-3);
    spec.train.seed = config.get_u64("seed", 7);

    const BenchReport report = ablation_run(spec, &std::cout);
    std::filesystem::create_directories(out);
    write_text(out + "/ablation.csv", report.to_csv());
    write_manifest(config, out, "ablate");
    std::cout << report.to_csv();
    return 0;
}

int run_pad_study(const Config& config, const std::string& corpus_dir,
                  const std::string& checkpoint) {
    const std::string out = config.get_string("out", "out");
    const CorpusOnDisk corpus = load_corpus(corpus_dir);
    const LoadedModel loaded = load_model(checkpoint);

    std::vector<DialogueExample> examples;
    for (const auto& ex : split_examples(corpus, config.get_string("eval.split", "dev")))
        if (ex.task == Task::dst) examples.push_back(ex);
    const auto cap = static_cast<std::size_t>(config.get_int("pad.max_examples", 48));
    if (examples.size() > cap) examples.resize(cap);

    const auto batch_sizes = parse_int_list(config.get_string("pad.batch_sizes", "1,4,16,64"));
    const PadStudyReport report =
        padding_sensitivity_study(loaded.model, loaded.vocab, examples, batch_sizes);

    std::filesystem::create_directories(out);
    write_text(out + "/pad_study.csv", report.to_csv());
    write_manifest(config, out, "pad-study");
    std::cout << report.to_csv();
    std::cout << "average jga over batch sizes: " << report.average_jga << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"soft mixture-of-experts task-oriented dialogue workbench"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string corpus_dir = "corpus";
    std::string checkpoint, dst_checkpoint, history_text;

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus and database");
    add_config_flags(gen, args);

    auto* train_cmd = app.add_subcommand("train", "train a model on one task");
    add_config_flags(train_cmd, args);
    train_cmd->add_option("--corpus", corpus_dir, "corpus directory");
    train_cmd->add_option_function<std::string>(
        "--task", [&args](const std::string& v) { args.overrides["train.task"] = v; },
        "nlu | dst | nlg");
    train_cmd->add_option_function<std::string>(
        "--checkpoint", [&args](const std::string& v) { args.overrides["out"] = v; },
        "write the checkpoint to this directory (alias for --out)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_config_flags(eval_cmd, args);
    eval_cmd->add_option("--corpus", corpus_dir, "corpus directory");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--dst-checkpoint", dst_checkpoint,
                         "DST checkpoint for two-step NLG evaluation");
    eval_cmd->add_option_function<std::string>(
        "--task", [&args](const std::string& v) { args.overrides["train.task"] = v; },
        "nlu | dst | nlg");
    eval_cmd->add_option_function<std::string>(
        "--split", [&args](const std::string& v) { args.overrides["eval.split"] = v; },
        "train | dev | test");

    auto* infer_cmd = app.add_subcommand("infer", "two-step inference on one dialogue history");
    add_config_flags(infer_cmd, args);
    infer_cmd->add_option("--corpus", corpus_dir, "corpus directory (database + vocab)");
    infer_cmd->add_option("--checkpoint", checkpoint, "NLG checkpoint")->required();
    infer_cmd->add_option("--dst-checkpoint", dst_checkpoint, "DST checkpoint")->required();
    infer_cmd->add_option("--history", history_text, "serialized dialogue history")->required();

    auto* bench_cmd = app.add_subcommand("bench", "forward-latency scaling benchmark");
    add_config_flags(bench_cmd, args);
    bench_cmd->add_option_function<std::string>(
        "--experts", [&args](const std::string& v) { args.overrides["bench.experts"] = v; },
        "comma list of expert counts");
    bench_cmd->add_option_function<std::string>(
        "--slots", [&args](const std::string& v) { args.overrides["bench.slots"] = v; },
        "comma list of slots per expert");
    bench_cmd->add_option_function<std::string>(
        "--slots-total",
        [&args](const std::string& v) { args.overrides["bench.slots_total"] = v; },
        "fixed total slot count");
    bench_cmd->add_option_function<std::string>(
        "--repeats", [&args](const std::string& v) { args.overrides["bench.repeats"] = v; },
        "timed repetitions");

    auto* ablate_cmd = app.add_subcommand("ablate", "expert-count ablation sweep");
    add_config_flags(ablate_cmd, args);

    auto* pad_cmd = app.add_subcommand("pad-study", "batch-padding sensitivity study");
    add_config_flags(pad_cmd, args);
    pad_cmd->add_option("--corpus", corpus_dir, "corpus directory");
    pad_cmd->add_option("--checkpoint", checkpoint, "checkpoint to probe")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << app.help() << "\n";
        return 1;
    }

    try {
        const Config config = effective_config(args);
        if (gen->parsed()) return run_gen_corpus(config);
        if (train_cmd->parsed()) return run_train(config, corpus_dir);
        if (eval_cmd->parsed()) return run_eval(config, corpus_dir, checkpoint, dst_checkpoint);
        if (infer_cmd->parsed())
            return run_infer(config, corpus_dir, checkpoint, dst_checkpoint, history_text);
        if (bench_cmd->parsed()) return run_bench(config);
        if (ablate_cmd->parsed()) return run_ablate(config);
        if (pad_cmd->parsed()) return run_pad_study(config, corpus_dir, checkpoint);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

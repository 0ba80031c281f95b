#include "radsum/cli.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "radsum/corpus.hpp"
#include "radsum/eval.hpp"
#include "radsum/infer.hpp"
#include "radsum/pipeline.hpp"
#include "radsum/util.hpp"

namespace radsum {

namespace fs = std::filesystem;

namespace {

// Schema violations exit with code 2; everything else that throws exits 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SplitConfig {
    double train = 0.9;
    double val = 0.05;
    double test = 0.05;
};

struct CorpusConfig {
    size_t n_reports = 1000;
    double abnormality_rate = 0.5;
    int facts_min = 2;
    int facts_max = 5;
    int style_variants = 3;
    size_t max_tokens = 512;
    SplitConfig splits;
};

struct TokenizerConfig {
    size_t max_vocab = 8192;
    bool include_builtin = true;
};

struct StageData {
    size_t n_texts = 20000;  // general_pretrain corpus size
    size_t n_pairs = 20000;  // instruction_tune corpus size
    bool mask_prompt = true;
};

struct StageConfig {
    StageSpec spec;
    StageData data;
};

struct EvalConfig {
    size_t limit = 0;  // 0 = evaluate the whole test split
};

struct RunConfig {
    uint64_t seed = 0;
    CorpusConfig corpus;
    TokenizerConfig tokenizer;
    ModelConfig model;
    std::vector<StageConfig> stages;
    SamplerConfig sampler;
    EvalConfig eval;
    std::string out_dir = "runs/default";
};

void check_keys(const Json& j, const std::string& where,
                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <typename T>
T get_field(const Json& j, const std::string& where, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config: " + where + "." + key + " has the wrong type");
    }
}

CorpusConfig parse_corpus(const Json& j) {
    check_keys(j, "corpus",
               {"n_reports", "abnormality_rate", "facts_min", "facts_max", "style_variants",
                "max_tokens", "splits"});
    CorpusConfig c;
    c.n_reports = get_field<size_t>(j, "corpus", "n_reports", c.n_reports);
    c.abnormality_rate = get_field<double>(j, "corpus", "abnormality_rate", c.abnormality_rate);
    c.facts_min = get_field<int>(j, "corpus", "facts_min", c.facts_min);
    c.facts_max = get_field<int>(j, "corpus", "facts_max", c.facts_max);
    c.style_variants = get_field<int>(j, "corpus", "style_variants", c.style_variants);
    c.max_tokens = get_field<size_t>(j, "corpus", "max_tokens", c.max_tokens);
    if (j.contains("splits")) {
        const auto& s = j.at("splits");
        check_keys(s, "corpus.splits", {"train", "val", "test"});
        c.splits.train = get_field<double>(s, "corpus.splits", "train", c.splits.train);
        c.splits.val = get_field<double>(s, "corpus.splits", "val", c.splits.val);
        c.splits.test = get_field<double>(s, "corpus.splits", "test", c.splits.test);
    }
    return c;
}

TokenizerConfig parse_tokenizer(const Json& j) {
    check_keys(j, "tokenizer", {"max_vocab", "include_builtin"});
    TokenizerConfig c;
    c.max_vocab = get_field<size_t>(j, "tokenizer", "max_vocab", c.max_vocab);
    c.include_builtin = get_field<bool>(j, "tokenizer", "include_builtin", c.include_builtin);
    return c;
}

ModelConfig parse_model(const Json& j) {
    check_keys(j, "model", {"n_layers", "n_heads", "d_model", "d_ff", "max_seq", "init_std"});
    ModelConfig c;
    c.n_layers = get_field<int>(j, "model", "n_layers", 4);
    c.n_heads = get_field<int>(j, "model", "n_heads", 4);
    c.d_model = get_field<int>(j, "model", "d_model", 128);
    c.d_ff = get_field<int>(j, "model", "d_ff", 0);
    c.max_seq = get_field<int>(j, "model", "max_seq", 256);
    c.init_std = get_field<double>(j, "model", "init_std", 0.02);
    return c;
}

AdamWConfig parse_optimizer(const Json& j, const std::string& where) {
    check_keys(j, where,
               {"lr", "beta1", "beta2", "eps", "weight_decay", "clip_norm", "clip_enabled"});
    AdamWConfig c;
    c.lr = get_field<double>(j, where, "lr", c.lr);
    c.beta1 = get_field<double>(j, where, "beta1", c.beta1);
    c.beta2 = get_field<double>(j, where, "beta2", c.beta2);
    c.eps = get_field<double>(j, where, "eps", c.eps);
    c.weight_decay = get_field<double>(j, where, "weight_decay", c.weight_decay);
    c.clip_norm = get_field<double>(j, where, "clip_norm", c.clip_norm);
    c.clip_enabled = get_field<bool>(j, where, "clip_enabled", c.clip_enabled);
    return c;
}

StageConfig parse_stage(const Json& j, size_t index, uint64_t seed) {
    const std::string where = "stages[" + std::to_string(index) + "]";
    check_keys(j, where,
               {"kind", "steps", "batch_size", "seq_len", "eval_every", "freeze_policy",
                "optimizer", "data"});
    StageConfig c;
    if (!j.contains("kind")) throw ConfigError("config: " + where + ".kind is required");
    c.spec.kind = get_field<std::string>(j, where, "kind", "");
    c.spec.steps = get_field<int64_t>(j, where, "steps", 1);
    c.spec.batch_size = get_field<int>(j, where, "batch_size", 16);
    c.spec.seq_len = get_field<int>(j, where, "seq_len", 256);
    c.spec.eval_every = get_field<int64_t>(j, where, "eval_every", 100);
    c.spec.freeze_policy = get_field<std::string>(j, where, "freeze_policy", "none");
    c.spec.seed = seed;
    if (j.contains("optimizer")) c.spec.optimizer = parse_optimizer(j.at("optimizer"), where + ".optimizer");
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, where + ".data", {"n_texts", "n_pairs", "mask_prompt"});
        c.data.n_texts = get_field<size_t>(d, where + ".data", "n_texts", c.data.n_texts);
        c.data.n_pairs = get_field<size_t>(d, where + ".data", "n_pairs", c.data.n_pairs);
        c.data.mask_prompt = get_field<bool>(d, where + ".data", "mask_prompt", c.data.mask_prompt);
    }
    return c;
}

SamplerConfig parse_sampler(const Json& j, uint64_t seed) {
    check_keys(j, "sampler", {"max_new_tokens", "top_k", "top_p", "temperature"});
    SamplerConfig c;
    c.max_new_tokens = get_field<int>(j, "sampler", "max_new_tokens", c.max_new_tokens);
    c.top_k = get_field<int>(j, "sampler", "top_k", c.top_k);
    c.top_p = get_field<double>(j, "sampler", "top_p", c.top_p);
    c.temperature = get_field<double>(j, "sampler", "temperature", c.temperature);
    c.seed = seed;
    return c;
}

RunConfig parse_config(const Json& j) {
    check_keys(j, "top level",
               {"seed", "corpus", "tokenizer", "model", "stages", "sampler", "eval", "paths"});
    RunConfig c;
    c.seed = get_field<uint64_t>(j, "top level", "seed", 0);
    if (j.contains("corpus")) c.corpus = parse_corpus(j.at("corpus"));
    if (j.contains("tokenizer")) c.tokenizer = parse_tokenizer(j.at("tokenizer"));
    c.model = j.contains("model") ? parse_model(j.at("model")) : parse_model(Json::object());
    c.model.seed = c.seed;
    if (j.contains("stages")) {
        if (!j.at("stages").is_array()) throw ConfigError("config: stages must be an array");
        for (size_t i = 0; i < j.at("stages").size(); ++i)
            c.stages.push_back(parse_stage(j.at("stages")[i], i, c.seed));
    }
    c.sampler = parse_sampler(j.contains("sampler") ? j.at("sampler") : Json::object(), c.seed);
    if (j.contains("eval")) {
        check_keys(j.at("eval"), "eval", {"limit"});
        c.eval.limit = get_field<size_t>(j.at("eval"), "eval", "limit", c.eval.limit);
    }
    if (j.contains("paths")) {
        check_keys(j.at("paths"), "paths", {"out_dir"});
        c.out_dir = get_field<std::string>(j.at("paths"), "paths", "out_dir", c.out_dir);
    }

    // Semantic checks, still before any work happens.
    if (c.corpus.n_reports < 1) throw ConfigError("config: corpus.n_reports must be >= 1");
    const double split_sum = c.corpus.splits.train + c.corpus.splits.val + c.corpus.splits.test;
    if (std::abs(split_sum - 1.0) > 1e-9)
        throw ConfigError("config: corpus.splits must sum to 1");
    try {
        c.sampler.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: sampler: ") + e.what());
    }
    std::set<std::string> kinds;
    for (size_t i = 0; i < c.stages.size(); ++i) {
        const auto& s = c.stages[i];
        try {
            ModelConfig probe = c.model;
            probe.vocab_size = Vocab::kReserved + 1;  // placeholder; real size set later
            s.spec.validate(probe);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("config: stages[" + std::to_string(i) + "]: " + e.what());
        }
        if (!kinds.insert(s.spec.kind).second)
            throw ConfigError("config: stages[" + std::to_string(i) + "]: duplicate kind '" +
                              s.spec.kind + "'");
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const std::runtime_error&) {
        throw;  // missing file is a runtime error, not a schema error
    } catch (const std::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_config(j);
}

// Artifact layout under out_dir.
struct Paths {
    fs::path root;
    fs::path raw, gold, reports, train, val, test, vocab;
    fs::path ckpt_dir, curve_dir, gen_dir, eval_dir;

    explicit Paths(const std::string& out_dir) : root(out_dir) {
        const fs::path corpus = root / "corpus";
        raw = corpus / "raw.jsonl";
        gold = corpus / "gold.jsonl";
        reports = corpus / "reports.jsonl";
        train = corpus / "train.jsonl";
        val = corpus / "val.jsonl";
        test = corpus / "test.jsonl";
        vocab = root / "vocab.txt";
        ckpt_dir = root / "checkpoints";
        curve_dir = root / "curves";
        gen_dir = root / "generations";
        eval_dir = root / "eval";
    }

    fs::path checkpoint(const std::string& kind) const { return ckpt_dir / (kind + ".ckpt"); }
    fs::path curve(const std::string& kind) const { return curve_dir / (kind + ".csv"); }
    fs::path generations(const std::string& kind) const { return gen_dir / (kind + ".jsonl"); }
    fs::path eval_tsv(const std::string& kind) const { return eval_dir / (kind + ".tsv"); }
    fs::path eval_json(const std::string& kind) const { return eval_dir / (kind + ".json"); }
};

// Content-hash stamps give idempotent re-runs: a command whose inputs and
// outputs all hash to the stamped values reports "up to date" and exits.
uint64_t mix_hash(uint64_t h, uint64_t v) { return fnv1a64_u64(v, h); }

uint64_t hash_str(uint64_t h, const std::string& s) { return fnv1a64(s, h); }

uint64_t hash_file(uint64_t h, const fs::path& p) { return fnv1a64(read_file(p.string()), h); }

fs::path stamp_path(const fs::path& artifact) {
    fs::path p = artifact;
    p += ".stamp";
    return p;
}

bool outputs_fresh(const std::vector<fs::path>& outputs, uint64_t key) {
    for (const auto& o : outputs)
        if (!file_exists(o.string())) return false;
    const auto stamp = stamp_path(outputs.front());
    if (!file_exists(stamp.string())) return false;
    try {
        const Json j = Json::parse(read_file(stamp.string()));
        return j.at("key").get<std::string>() == to_hex(key);
    } catch (const std::exception&) {
        return false;
    }
}

void write_stamp(const std::vector<fs::path>& outputs, uint64_t key, uint64_t seed) {
    const Json j{{"key", to_hex(key)}, {"seed", seed}};
    write_file(stamp_path(outputs.front()).string(), j.dump() + "\n");
}

Json section_dump(const Json& full, const char* key) {
    return full.contains(key) ? full.at(key) : Json::object();
}

// Commands re-derive their input key from the raw config document so that
// editing an irrelevant section does not invalidate unrelated artifacts.
struct Workspace {
    RunConfig cfg;
    Json raw_config;
    Paths paths;

    Workspace(const std::string& config_path)
        : cfg(load_config(config_path)),
          raw_config(Json::parse(read_file(config_path))),
          paths(cfg.out_dir) {}
};

void progress(const std::string& line) { std::cerr << line << "\n"; }

int cmd_gen_corpus(Workspace& ws) {
    const auto& c = ws.cfg.corpus;
    uint64_t key = fnv1a64("gen-corpus");
    key = hash_str(key, section_dump(ws.raw_config, "corpus").dump());
    key = mix_hash(key, ws.cfg.seed);
    const std::vector<fs::path> outputs = {ws.paths.raw, ws.paths.gold};
    if (outputs_fresh(outputs, key)) {
        progress("gen-corpus: up to date");
        return 0;
    }
    GeneratorSpec spec;
    spec.n_reports = c.n_reports;
    spec.seed = ws.cfg.seed;
    spec.abnormality_rate = c.abnormality_rate;
    spec.facts_min = c.facts_min;
    spec.facts_max = c.facts_max;
    spec.style_variants = c.style_variants;
    auto corpus = generate_corpus(spec);
    const Json meta{{"seed", ws.cfg.seed}, {"n_reports", c.n_reports}};
    save_raw_jsonl(ws.paths.raw.string(), corpus.reports, meta);
    save_gold_jsonl(ws.paths.gold.string(), corpus.gold, meta);
    write_stamp(outputs, key, ws.cfg.seed);
    progress("gen-corpus: wrote " + std::to_string(corpus.reports.size()) + " reports");
    return 0;
}

int cmd_preprocess(Workspace& ws) {
    uint64_t key = fnv1a64("preprocess");
    key = hash_file(key, ws.paths.raw);
    key = hash_file(key, ws.paths.gold);
    key = hash_str(key, section_dump(ws.raw_config, "corpus").dump());
    key = mix_hash(key, ws.cfg.seed);
    const std::vector<fs::path> outputs = {ws.paths.reports, ws.paths.train, ws.paths.val,
                                           ws.paths.test};
    if (outputs_fresh(outputs, key)) {
        progress("preprocess: up to date");
        return 0;
    }
    auto [raws, raw_meta] = load_raw_jsonl(ws.paths.raw.string());
    auto [gold, gold_meta] = load_gold_jsonl(ws.paths.gold.string());
    auto result = preprocess_corpus(raws, &gold);
    progress("preprocess: sectioned " + std::to_string(result.stats.n_sectioned) + "/" +
             std::to_string(result.stats.n_input) + " reports");

    // Token counting is vocabulary-independent for a word-level tokenizer, so
    // a vocab built from the reports themselves is fine for length filtering.
    std::vector<std::string> texts;
    for (const auto& r : result.reports) {
        texts.push_back(r.findings);
        texts.push_back(r.impressions);
    }
    const auto counting_vocab = Vocab::build(texts, 1 << 20);
    const auto kept = filter_reports(result.reports, counting_vocab, ws.cfg.corpus.max_tokens);
    progress("preprocess: kept " + std::to_string(kept.size()) + " after length filter");

    const auto& s = ws.cfg.corpus.splits;
    auto splits = split_corpus(kept, s.train, s.val, s.test, ws.cfg.seed);
    const Json meta{{"seed", ws.cfg.seed}};
    save_report_jsonl(ws.paths.reports.string(), kept, meta);
    save_report_jsonl(ws.paths.train.string(), splits.train, meta);
    save_report_jsonl(ws.paths.val.string(), splits.val, meta);
    save_report_jsonl(ws.paths.test.string(), splits.test, meta);
    write_stamp(outputs, key, ws.cfg.seed);
    progress("preprocess: split " + std::to_string(splits.train.size()) + "/" +
             std::to_string(splits.val.size()) + "/" + std::to_string(splits.test.size()));
    return 0;
}

int cmd_stats(const std::string& in_path) {
    auto [reports, meta] = load_report_jsonl(in_path);
    const auto table = corpus_stats(reports, fs::path(in_path).stem().string());
    std::cout << render_stats_tsv(table);
    return 0;
}

int cmd_build_vocab(Workspace& ws) {
    uint64_t key = fnv1a64("build-vocab");
    key = hash_file(key, ws.paths.train);
    key = hash_str(key, section_dump(ws.raw_config, "tokenizer").dump());
    const std::vector<fs::path> outputs = {ws.paths.vocab};
    if (outputs_fresh(outputs, key)) {
        progress("build-vocab: up to date");
        return 0;
    }
    auto [train, meta] = load_report_jsonl(ws.paths.train.string());
    std::vector<std::string> texts;
    if (ws.cfg.tokenizer.include_builtin) texts = builtin_texts();
    for (const auto& r : train) {
        texts.push_back(r.findings);
        texts.push_back(r.impressions);
    }
    const auto vocab = Vocab::build(texts, ws.cfg.tokenizer.max_vocab);
    vocab.save(ws.paths.vocab.string());
    write_stamp(outputs, key, ws.cfg.seed);
    progress("build-vocab: " + std::to_string(vocab.size()) + " tokens");
    return 0;
}

// Train-time stage inputs. Baked-in sizes for validation sets keep them small
// relative to training streams.
uint64_t val_data_seed(uint64_t seed) { return Rng::derive(seed, fnv1a64("val-data")).next_u64(); }

std::vector<TrainExample> stage_train_examples(const Workspace& ws, const StageConfig& stage,
                                               const Vocab& vocab,
                                               const std::vector<Report>& train_reports) {
    const size_t seq_len = static_cast<size_t>(stage.spec.seq_len);
    ExampleSet set;
    if (stage.spec.kind == "general_pretrain") {
        set = make_text_examples(make_general_texts(stage.data.n_texts, ws.cfg.seed), vocab,
                                 seq_len);
    } else if (stage.spec.kind == "instruction_tune") {
        set = make_pair_examples(
            make_instruction_pairs(stage.data.n_pairs, default_instruction_tasks(), ws.cfg.seed),
            vocab, seq_len);
    } else if (stage.spec.kind == "dapt") {
        set = make_lm_examples(train_reports, vocab, seq_len);
    } else if (stage.spec.kind == "finetune") {
        set = make_prompted_examples(train_reports, vocab, seq_len, stage.data.mask_prompt);
    } else {
        throw std::invalid_argument("train: unknown stage kind " + stage.spec.kind);
    }
    if (set.skipped > 0)
        progress("train: " + stage.spec.kind + ": skipped " + std::to_string(set.skipped) +
                 " over-length examples");
    return std::move(set.examples);
}

std::vector<TrainExample> stage_val_examples(const Workspace& ws, const StageConfig& stage,
                                             const Vocab& vocab,
                                             const std::vector<Report>& val_reports) {
    const size_t seq_len = static_cast<size_t>(stage.spec.seq_len);
    const uint64_t vseed = val_data_seed(ws.cfg.seed);
    if (stage.spec.kind == "general_pretrain")
        return make_text_examples(make_general_texts(128, vseed), vocab, seq_len).examples;
    if (stage.spec.kind == "instruction_tune")
        return make_pair_examples(make_instruction_pairs(128, default_instruction_tasks(), vseed),
                                  vocab, seq_len)
            .examples;
    if (stage.spec.kind == "dapt") return make_lm_examples(val_reports, vocab, seq_len).examples;
    return make_prompted_examples(val_reports, vocab, seq_len, stage.data.mask_prompt).examples;
}

const std::map<std::string, std::string>& predecessor_kind() {
    static const std::map<std::string, std::string> map = {
        {"general_pretrain", ""},
        {"instruction_tune", "general_pretrain"},
        {"dapt", "instruction_tune"},
        {"finetune", "instruction_tune"}};
    return map;
}

int cmd_train_stage(Workspace& ws, size_t index) {
    const auto& stage = ws.cfg.stages.at(index);
    const auto it = predecessor_kind().find(stage.spec.kind);
    if (it == predecessor_kind().end())
        throw std::invalid_argument("train: unknown stage kind " + stage.spec.kind);
    const std::string& pred = it->second;
    const fs::path ckpt_path = ws.paths.checkpoint(stage.spec.kind);
    const fs::path curve_path = ws.paths.curve(stage.spec.kind);

    uint64_t key = fnv1a64("train");
    key = hash_str(key, section_dump(ws.raw_config, "stages")[index].dump());
    key = hash_str(key, section_dump(ws.raw_config, "model").dump());
    key = mix_hash(key, ws.cfg.seed);
    key = hash_file(key, ws.paths.vocab);
    if (!pred.empty()) {
        const auto pred_path = ws.paths.checkpoint(pred);
        if (!file_exists(pred_path.string()))
            throw std::runtime_error("train: stage " + stage.spec.kind +
                                     " needs the " + pred + " checkpoint; train it first");
        key = hash_file(key, pred_path);
    }
    const bool uses_reports = stage.spec.kind == "dapt" || stage.spec.kind == "finetune";
    if (uses_reports) {
        key = hash_file(key, ws.paths.train);
        key = hash_file(key, ws.paths.val);
    }
    const std::vector<fs::path> outputs = {ckpt_path, curve_path};
    if (outputs_fresh(outputs, key)) {
        progress("train: " + stage.spec.kind + ": up to date");
        return 0;
    }

    const auto vocab = Vocab::load(ws.paths.vocab.string());
    std::vector<Report> train_reports, val_reports;
    if (uses_reports) {
        train_reports = load_report_jsonl(ws.paths.train.string()).first;
        val_reports = load_report_jsonl(ws.paths.val.string()).first;
    }

    Checkpoint start;
    if (pred.empty()) {
        ModelConfig mc = ws.cfg.model;
        mc.vocab_size = static_cast<int>(vocab.size());
        mc.validate();
        start = init_checkpoint(mc);
    } else {
        start = load_checkpoint(ws.paths.checkpoint(pred).string());
    }

    const auto train_data = stage_train_examples(ws, stage, vocab, train_reports);
    const auto val_data = stage_val_examples(ws, stage, vocab, val_reports);
    progress("train: " + stage.spec.kind + ": " + std::to_string(train_data.size()) +
             " train / " + std::to_string(val_data.size()) + " val examples, " +
             std::to_string(stage.spec.steps) + " steps");

    auto result = run_stage(start, stage.spec, train_data, val_data, &std::cerr);
    save_checkpoint(ckpt_path.string(), result.checkpoint);
    write_file(curve_path.string(), render_loss_curve_csv(result.curve, ws.cfg.seed));
    write_stamp(outputs, key, ws.cfg.seed);
    progress("train: " + stage.spec.kind + ": saved " + ckpt_path.string());
    return 0;
}

int cmd_train(Workspace& ws, int stage_index, bool all) {
    if (ws.cfg.stages.empty()) throw ConfigError("config: stages must not be empty for train");
    if (all) {
        for (size_t i = 0; i < ws.cfg.stages.size(); ++i) {
            const int rc = cmd_train_stage(ws, i);
            if (rc != 0) return rc;
        }
        return 0;
    }
    if (stage_index < 0 || static_cast<size_t>(stage_index) >= ws.cfg.stages.size())
        throw ConfigError("config: --stage " + std::to_string(stage_index) +
                          " out of range; have " + std::to_string(ws.cfg.stages.size()) +
                          " stages");
    return cmd_train_stage(ws, static_cast<size_t>(stage_index));
}

std::vector<Report> load_eval_reports(const Workspace& ws) {
    auto reports = load_report_jsonl(ws.paths.test.string()).first;
    if (ws.cfg.eval.limit > 0 && reports.size() > ws.cfg.eval.limit)
        reports.resize(ws.cfg.eval.limit);
    return reports;
}

int cmd_infer(Workspace& ws, const std::string& kind) {
    const fs::path ckpt_path = ws.paths.checkpoint(kind);
    if (!file_exists(ckpt_path.string()))
        throw std::runtime_error("infer: missing checkpoint " + ckpt_path.string());

    uint64_t key = fnv1a64("infer");
    key = hash_file(key, ckpt_path);
    key = hash_file(key, ws.paths.test);
    key = hash_str(key, section_dump(ws.raw_config, "sampler").dump());
    key = hash_str(key, section_dump(ws.raw_config, "eval").dump());
    key = mix_hash(key, ws.cfg.seed);
    const std::vector<fs::path> outputs = {ws.paths.generations(kind)};
    if (outputs_fresh(outputs, key)) {
        progress("infer: " + kind + ": up to date");
        return 0;
    }

    const auto vocab = Vocab::load(ws.paths.vocab.string());
    const auto checkpoint = load_checkpoint(ckpt_path.string());
    const auto reports = load_eval_reports(ws);
    progress("infer: " + kind + ": generating " + std::to_string(reports.size()) +
             " impressions");
    const auto records = generate_batch(checkpoint.params, vocab, reports, ws.cfg.sampler);
    const Json meta{{"seed", ws.cfg.seed}, {"checkpoint", kind}, {"n", records.size()}};
    save_generations_jsonl(ws.paths.generations(kind).string(), records, meta);
    write_stamp(outputs, key, ws.cfg.seed);
    progress("infer: " + kind + ": wrote " + ws.paths.generations(kind).string());
    return 0;
}

EvalReport eval_for(Workspace& ws, const std::string& kind) {
    const fs::path gen_path = ws.paths.generations(kind);
    if (!file_exists(gen_path.string()))
        throw std::runtime_error("eval: missing generations " + gen_path.string());

    uint64_t key = fnv1a64("eval");
    key = hash_file(key, gen_path);
    key = hash_file(key, ws.paths.test);
    key = hash_str(key, section_dump(ws.raw_config, "eval").dump());
    const std::vector<fs::path> outputs = {ws.paths.eval_tsv(kind), ws.paths.eval_json(kind)};

    const auto generations = load_generations_jsonl(gen_path.string()).first;
    const auto reports = load_eval_reports(ws);
    const auto report = evaluate_run(generations, reports);
    if (!outputs_fresh(outputs, key)) {
        write_file(ws.paths.eval_tsv(kind).string(), render_eval_tsv(report, ws.cfg.seed));
        write_file(ws.paths.eval_json(kind).string(),
                   eval_report_json(report, ws.cfg.seed).dump(2) + "\n");
        write_stamp(outputs, key, ws.cfg.seed);
        progress("eval: " + kind + ": wrote " + ws.paths.eval_tsv(kind).string());
    } else {
        progress("eval: " + kind + ": up to date");
    }
    return report;
}

int cmd_eval(Workspace& ws, const std::string& kind) {
    const auto report = eval_for(ws, kind);
    std::cout << render_eval_table({{kind, report}});
    return 0;
}

int cmd_compare(Workspace& ws) {
    // The paradigm comparison: domain-adaptive pretraining evaluated zero-shot
    // against the finetuned baseline, both from the same instruction model.
    for (const std::string kind : {"dapt", "finetune"}) {
        const int rc = cmd_infer(ws, kind);
        if (rc != 0) return rc;
    }
    const auto dapt = eval_for(ws, "dapt");
    const auto finetuned = eval_for(ws, "finetune");
    std::cout << render_eval_table({{"zero-shot (dapt)", dapt}, {"finetuned", finetuned}});
    return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"radsum: desk-scale radiology report summarization laboratory"};
    app.require_subcommand(1);

    std::string config_path = "config.json";
    std::string stats_in;
    std::string infer_kind = "dapt";
    std::string eval_kind = "dapt";
    int stage_index = -1;
    bool train_all = false;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Run configuration JSON")->required();
    };

    auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic raw corpus");
    add_config(gen);
    auto* pre = app.add_subcommand("preprocess", "Clean, mask, section, filter, split");
    add_config(pre);
    auto* stats = app.add_subcommand("stats", "Print word-count statistics for a report JSONL");
    stats->add_option("--in", stats_in, "Report JSONL path")->required();
    auto* vocab_cmd = app.add_subcommand("build-vocab", "Build the tokenizer vocabulary");
    add_config(vocab_cmd);
    auto* train = app.add_subcommand("train", "Run training stages");
    add_config(train);
    auto* stage_opt = train->add_option("--stage", stage_index, "Stage index to run");
    train->add_flag("--all", train_all, "Run every stage in order")->excludes(stage_opt);
    auto* infer = app.add_subcommand("infer", "Generate impressions for the test split");
    add_config(infer);
    const auto kind_check = CLI::IsMember(
        {"general_pretrain", "instruction_tune", "dapt", "finetune"});
    infer->add_option("--checkpoint", infer_kind, "Checkpoint kind (stage name)")->check(kind_check);
    auto* eval_cmd = app.add_subcommand("eval", "Score generations against references");
    add_config(eval_cmd);
    eval_cmd->add_option("--generations", eval_kind, "Generation set (stage name)")->check(kind_check);
    auto* compare = app.add_subcommand("compare", "Zero-shot adapted vs finetuned table");
    add_config(compare);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (stats->parsed()) return cmd_stats(stats_in);
        Workspace ws(config_path);
        if (gen->parsed()) return cmd_gen_corpus(ws);
        if (pre->parsed()) return cmd_preprocess(ws);
        if (vocab_cmd->parsed()) return cmd_build_vocab(ws);
        if (train->parsed()) {
            if (!train_all && stage_index < 0)
                throw ConfigError("train: pass --all or --stage <index>");
            return cmd_train(ws, stage_index, train_all);
        }
        if (infer->parsed()) return cmd_infer(ws, infer_kind);
        if (eval_cmd->parsed()) return cmd_eval(ws, eval_kind);
        if (compare->parsed()) return cmd_compare(ws);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace radsum

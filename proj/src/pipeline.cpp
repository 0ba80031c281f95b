#include "radsum/pipeline.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "radsum/rng.hpp"
#include "radsum/util.hpp"

namespace radsum {

namespace {

const uint64_t kBatchTag = fnv1a64("batch");
const uint64_t kStageRngTag = fnv1a64("stage-rng");
const uint64_t kGeneralTag = fnv1a64("general-text");

constexpr uint32_t kCheckpointVersion = 1;
const char kMagic[4] = {'R', 'S', 'L', 'B'};

TrainExample pad_example(const std::vector<int>& ids, size_t first_supervised_target,
                         size_t seq_len) {
    const size_t n = ids.size();
    TrainExample ex;
    ex.input_ids.assign(seq_len, Vocab::kPad);
    ex.target_ids.assign(seq_len, Vocab::kPad);
    ex.loss_mask.assign(seq_len, 0);
    std::copy(ids.begin(), ids.end(), ex.input_ids.begin());
    for (size_t i = 0; i + 1 < n; ++i) {
        ex.target_ids[i] = ids[i + 1];
        if (i + 1 >= first_supervised_target) ex.loss_mask[i] = 1;
    }
    return ex;
}

// Word pools for the builtin generators. None of the words contain tokenizer
// split characters (including the letter x), so encode/decode round-trips.
const std::vector<std::string>& adjectives() {
    static const std::vector<std::string> v = {"old",   "red",    "small", "tall", "quiet",
                                               "bright", "heavy", "green", "warm", "plain"};
    return v;
}

const std::vector<std::string>& nouns() {
    static const std::vector<std::string> v = {"river",  "stone",  "garden", "tower",
                                               "lamp",   "road",   "window", "forest",
                                               "bridge", "meadow", "cart",   "barn"};
    return v;
}

const std::vector<std::string>& verbs() {
    static const std::vector<std::string> v = {"crosses", "guards", "follows", "lights",
                                               "borders", "shades", "meets",   "holds",
                                               "faces",   "cools"};
    return v;
}

const std::vector<std::pair<std::string, std::string>>& antonym_pairs() {
    static const std::vector<std::pair<std::string, std::string>> v = {
        {"up", "down"},   {"big", "small"},  {"hot", "cold"},   {"fast", "slow"},
        {"old", "new"},   {"light", "dark"}, {"open", "shut"},  {"first", "last"},
        {"near", "far"},  {"high", "low"}};
    return v;
}

std::vector<std::string> word_pool() {
    std::vector<std::string> pool = nouns();
    const auto& adj = adjectives();
    pool.insert(pool.end(), adj.begin(), adj.end());
    const auto& vb = verbs();
    pool.insert(pool.end(), vb.begin(), vb.end());
    return pool;
}

const std::string& pick(const std::vector<std::string>& v, Rng& rng) {
    return v[rng.uniform_below(v.size())];
}

// Sentence plus its condensed form, the unit of the summarize task.
struct ProseSentence {
    std::string full;
    std::string condensed;
};

ProseSentence make_sentence(Rng& rng) {
    const std::string& a1 = pick(adjectives(), rng);
    const std::string& n1 = pick(nouns(), rng);
    const std::string& vb = pick(verbs(), rng);
    const std::string& a2 = pick(adjectives(), rng);
    const std::string& n2 = pick(nouns(), rng);
    ProseSentence s;
    s.full = "the " + a1 + " " + n1 + " " + vb + " the " + a2 + " " + n2 + " .";
    s.condensed = n1 + " " + vb + " " + n2 + " .";
    return s;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

PromptPair make_task_pair(const std::string& task, Rng& rng) {
    const auto pool = word_pool();
    if (task == "copy") {
        const size_t k = 3 + rng.uniform_below(6);
        std::vector<std::string> words;
        for (size_t i = 0; i < k; ++i) words.push_back(pick(pool, rng));
        return {"copy: " + join_words(words) + "\nanswer:", join_words(words)};
    }
    if (task == "reverse") {
        const size_t k = 3 + rng.uniform_below(4);
        std::vector<std::string> words;
        for (size_t i = 0; i < k; ++i) words.push_back(pick(pool, rng));
        auto rev = words;
        std::reverse(rev.begin(), rev.end());
        return {"reverse: " + join_words(words) + "\nanswer:", join_words(rev)};
    }
    if (task == "sort") {
        const size_t k = 3 + rng.uniform_below(4);
        auto bag = pool;
        rng.shuffle(bag);
        std::vector<std::string> words(bag.begin(), bag.begin() + k);
        auto sorted = words;
        std::sort(sorted.begin(), sorted.end());
        return {"sort: " + join_words(words) + "\nanswer:", join_words(sorted)};
    }
    if (task == "answer") {
        const auto& pairs = antonym_pairs();
        const auto& p = pairs[rng.uniform_below(pairs.size())];
        const bool flip = rng.uniform_below(2) == 1;
        const std::string& q = flip ? p.second : p.first;
        const std::string& a = flip ? p.first : p.second;
        return {"question: opposite of " + q + "\nanswer:", a};
    }
    if (task == "summarize") {
        const size_t k = 2 + rng.uniform_below(3);
        std::string text, condensed;
        for (size_t i = 0; i < k; ++i) {
            auto s = make_sentence(rng);
            if (i) {
                text += ' ';
                condensed += ' ';
            }
            text += s.full;
            condensed += s.condensed;
        }
        return {text + "\ntl;dr:", condensed};
    }
    throw std::invalid_argument("instruction mix: unknown task " + task);
}

void append_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(const std::string& s, size_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[at + i])) << (8 * i);
    return v;
}

uint64_t read_u64(const std::string& s, size_t at) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(s[at + i])) << (8 * i);
    return v;
}

uint32_t crc_of(const std::string& data, size_t len) {
    return static_cast<uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(len)));
}

Json config_to_json(const ModelConfig& c) {
    Json j;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_model"] = c.d_model;
    j["d_ff"] = c.d_ff;
    j["vocab_size"] = c.vocab_size;
    j["max_seq"] = c.max_seq;
    j["init_std"] = c.init_std;
    j["seed"] = c.seed;
    return j;
}

ModelConfig config_from_json(const Json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.init_std = j.at("init_std").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

// Stage order of the adaptation paradigm and its finetuning baseline.
std::string expected_predecessor(const std::string& kind) {
    if (kind == "general_pretrain") return "";
    if (kind == "instruction_tune") return "general_pretrain";
    if (kind == "dapt") return "instruction_tune";
    if (kind == "finetune") return "instruction_tune";
    throw std::invalid_argument("stage: unknown kind " + kind);
}

double mean_val_loss(const ModelParams& params, const std::vector<TrainExample>& val,
                     int64_t step) {
    if (val.empty()) throw std::invalid_argument("stage: empty validation set");
    std::vector<double> losses(val.size(), 0.0);
    parallel_for(val.size(), [&](size_t i) {
        const auto& ex = val[i];
        size_t eff = 0;
        for (size_t k = 0; k < ex.loss_mask.size(); ++k)
            if (ex.loss_mask[k]) eff = k + 1;
        std::vector<int> in(ex.input_ids.begin(), ex.input_ids.begin() + eff);
        std::vector<int> tg(ex.target_ids.begin(), ex.target_ids.begin() + eff);
        std::vector<uint8_t> mk(ex.loss_mask.begin(), ex.loss_mask.begin() + eff);
        losses[i] = lm_loss(params, in, tg, mk).item();
    });
    double sum = 0.0;
    for (double l : losses) sum += l;
    const double loss = sum / static_cast<double>(val.size());
    if (!std::isfinite(loss))
        throw std::runtime_error("stage: non-finite validation loss at step " +
                                 std::to_string(step));
    return loss;
}

}  // namespace

ExampleSet make_lm_examples(const std::vector<Report>& reports, const Vocab& vocab,
                            size_t seq_len) {
    ExampleSet out;
    for (const auto& r : reports) {
        std::vector<int> ids = {Vocab::kBos};
        for (int id : vocab.encode(r.findings)) ids.push_back(id);
        ids.push_back(Vocab::kSep);
        for (int id : vocab.encode(r.impressions)) ids.push_back(id);
        ids.push_back(Vocab::kEos);
        if (ids.size() > seq_len) {
            ++out.skipped;
            continue;
        }
        out.examples.push_back(pad_example(ids, 1, seq_len));
    }
    return out;
}

ExampleSet make_text_examples(const std::vector<std::string>& texts, const Vocab& vocab,
                              size_t seq_len) {
    ExampleSet out;
    for (const auto& text : texts) {
        std::vector<int> ids = {Vocab::kBos};
        for (int id : vocab.encode(text)) ids.push_back(id);
        ids.push_back(Vocab::kEos);
        if (ids.size() > seq_len) {
            ++out.skipped;
            continue;
        }
        out.examples.push_back(pad_example(ids, 1, seq_len));
    }
    return out;
}

ExampleSet make_pair_examples(const std::vector<PromptPair>& pairs, const Vocab& vocab,
                              size_t seq_len, bool mask_prompt) {
    ExampleSet out;
    for (const auto& pair : pairs) {
        const auto prompt_ids = vocab.encode(pair.prompt);
        const auto answer_ids = vocab.encode(pair.answer);
        std::vector<int> ids = {Vocab::kBos};
        ids.insert(ids.end(), prompt_ids.begin(), prompt_ids.end());
        ids.insert(ids.end(), answer_ids.begin(), answer_ids.end());
        ids.push_back(Vocab::kEos);
        if (ids.size() > seq_len) {
            ++out.skipped;
            continue;
        }
        // With mask_prompt, supervision starts at the first answer token (or
        // <eos> for an empty answer); otherwise at the first token after <bos>.
        const size_t first = mask_prompt ? 1 + prompt_ids.size() : 1;
        out.examples.push_back(pad_example(ids, first, seq_len));
    }
    return out;
}

std::string summarization_prompt(const std::string& findings) {
    return findings + "\ntl;dr:";
}

ExampleSet make_prompted_examples(const std::vector<Report>& reports, const Vocab& vocab,
                                  size_t seq_len, bool mask_prompt) {
    std::vector<PromptPair> pairs;
    pairs.reserve(reports.size());
    for (const auto& r : reports)
        pairs.push_back({summarization_prompt(r.findings), r.impressions});
    return make_pair_examples(pairs, vocab, seq_len, mask_prompt);
}

std::vector<TaskSpec> default_instruction_tasks() {
    return {{"copy", 1.0}, {"reverse", 1.0}, {"sort", 1.0}, {"answer", 1.0}, {"summarize", 1.0}};
}

std::vector<PromptPair> make_instruction_pairs(size_t n, const std::vector<TaskSpec>& tasks,
                                               uint64_t seed) {
    if (tasks.size() < 2)
        throw std::invalid_argument("instruction mix: need at least 2 task families");
    double total = 0.0;
    for (const auto& t : tasks) {
        if (t.weight <= 0.0)
            throw std::invalid_argument("instruction mix: non-positive weight for " + t.name);
        auto probe = Rng::derive(seed, fnv1a64("probe"));
        make_task_pair(t.name, probe);  // validates the name
        total += t.weight;
    }

    std::vector<PromptPair> out;
    out.reserve(n);
    std::vector<size_t> emitted(tasks.size(), 0);
    for (size_t i = 0; i < n; ++i) {
        // Largest-deficit scheduling keeps realized proportions within one
        // example of the target weights at every prefix.
        size_t best = 0;
        double best_deficit = -1.0;
        for (size_t t = 0; t < tasks.size(); ++t) {
            const double deficit = tasks[t].weight / total * static_cast<double>(i + 1) -
                                   static_cast<double>(emitted[t]);
            if (deficit > best_deficit + 1e-12) {
                best_deficit = deficit;
                best = t;
            }
        }
        auto rng = Rng::derive(seed, fnv1a64(tasks[best].name), emitted[best]);
        out.push_back(make_task_pair(tasks[best].name, rng));
        ++emitted[best];
    }
    return out;
}

std::vector<std::string> make_general_texts(size_t n, uint64_t seed) {
    std::vector<std::string> out(n);
    parallel_for(n, [&](size_t i) {
        auto rng = Rng::derive(seed, kGeneralTag, i);
        const size_t sentences = 2 + rng.uniform_below(4);
        std::string text;
        for (size_t s = 0; s < sentences; ++s) {
            if (s) text += ' ';
            text += make_sentence(rng).full;
        }
        out[i] = text;
    });
    return out;
}

std::vector<std::string> builtin_texts() {
    std::vector<std::string> out;
    out.push_back(join_words(word_pool()));
    std::vector<std::string> antonyms;
    for (const auto& [a, b] : antonym_pairs()) {
        antonyms.push_back(a);
        antonyms.push_back(b);
    }
    out.push_back(join_words(antonyms));
    out.push_back("the copy: reverse: sort: question: answer: opposite of tl;dr: .");
    return out;
}

std::string fingerprint_examples(const std::vector<TrainExample>& examples) {
    uint64_t h = fnv1a64_u64(examples.size());
    for (const auto& ex : examples) {
        h = fnv1a64_u64(ex.input_ids.size(), h);
        for (int id : ex.input_ids) h = fnv1a64_u64(static_cast<uint64_t>(id), h);
        for (int id : ex.target_ids) h = fnv1a64_u64(static_cast<uint64_t>(id), h);
        for (uint8_t m : ex.loss_mask) h = fnv1a64_u64(m, h);
    }
    return to_hex(h);
}

Checkpoint init_checkpoint(const ModelConfig& config) {
    Checkpoint ck;
    ck.params = init_params<float>(config);
    auto rng = Rng::derive(config.seed, kStageRngTag);
    ck.rng_state = rng.state();
    return ck;
}

void StageSpec::validate(const ModelConfig& config) const {
    expected_predecessor(kind);
    if (steps < 1) throw std::invalid_argument("stage: steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("stage: batch_size must be >= 1");
    if (seq_len < 2 || seq_len > static_cast<size_t>(config.max_seq))
        throw std::invalid_argument("stage: seq_len must be in [2, max_seq]");
    if (eval_every < 1) throw std::invalid_argument("stage: eval_every must be >= 1");
    optimizer.validate();
}

StageResult run_stage(const Checkpoint& start, const StageSpec& spec,
                      const std::vector<TrainExample>& train,
                      const std::vector<TrainExample>& val, std::ostream* progress) {
    spec.validate(start.params.config);
    if (train.empty()) throw std::invalid_argument("stage: empty training set");
    const std::string fingerprint = fingerprint_examples(train);

    int64_t start_step = 0;
    bool resuming = false;
    if (!start.provenance.empty() && start.provenance.back().kind == spec.kind) {
        const auto& last = start.provenance.back();
        if (last.steps > spec.steps)
            throw std::invalid_argument("stage: checkpoint already has " +
                                        std::to_string(last.steps) + " " + spec.kind +
                                        " steps, spec wants " + std::to_string(spec.steps));
        if (last.data_fingerprint != fingerprint)
            throw std::invalid_argument("stage: resume dataset fingerprint mismatch for " +
                                        spec.kind);
        start_step = last.steps;
        resuming = true;
        if (start_step == spec.steps) return {start, {}};
    } else {
        const std::string want = expected_predecessor(spec.kind);
        const std::string got = start.provenance.empty() ? "" : start.provenance.back().kind;
        if (got != want)
            throw std::invalid_argument(
                "stage: " + spec.kind + " must start from " +
                (want.empty() ? std::string("an untrained model") : want) + ", checkpoint has " +
                (got.empty() ? std::string("no stages") : got));
    }

    StageResult result;
    result.checkpoint.params = clone_params(start.params);
    result.checkpoint.opt = start.opt;
    result.checkpoint.provenance = start.provenance;
    auto& ck = result.checkpoint;
    if (resuming)
        ck.provenance.back().steps = spec.steps;
    else
        ck.provenance.push_back({spec.kind, spec.steps, fingerprint});

    const auto mask = freeze_mask(ck.params, spec.freeze_policy);
    // Each stage trains with fresh optimizer state; moments carry over only
    // when resuming an unfinished run of the same stage.
    if (!resuming) ck.opt = make_adamw_state(ck.params, mask);

    Rng stage_rng(1);
    if (resuming)
        stage_rng.set_state(start.rng_state);
    else
        stage_rng = Rng::derive(spec.seed, kStageRngTag, fnv1a64(spec.kind));

    std::vector<std::string> trainable;
    for (const auto& [name, t] : ck.params.named)
        if (mask.at(name)) trainable.push_back(name);

    if (start_step == 0 && !val.empty())
        result.curve.push_back({0, "val", mean_val_loss(ck.params, val, 0)});

    const size_t batch = static_cast<size_t>(spec.batch_size);
    for (int64_t step = start_step; step < spec.steps; ++step) {
        std::vector<double> losses(batch, 0.0);
        std::vector<GradStore> stores(batch);
        try {
            parallel_for(batch, [&](size_t slot) {
                const uint64_t pickv =
                    Rng::derive(spec.seed, kBatchTag, static_cast<uint64_t>(step), slot)
                        .next_u64();
                const auto& ex = train[pickv % train.size()];
                size_t eff = 0;
                for (size_t k = 0; k < ex.loss_mask.size(); ++k)
                    if (ex.loss_mask[k]) eff = k + 1;
                std::vector<int> in(ex.input_ids.begin(), ex.input_ids.begin() + eff);
                std::vector<int> tg(ex.target_ids.begin(), ex.target_ids.begin() + eff);
                std::vector<uint8_t> mk(ex.loss_mask.begin(), ex.loss_mask.begin() + eff);
                auto loss = lm_loss(ck.params, in, tg, mk);
                losses[slot] = loss.item();
                backward(loss, stores[slot]);
            });
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("stage: failure at step " + std::to_string(step) + ": " +
                                     e.what());
        }

        double batch_loss = 0.0;
        for (double l : losses) batch_loss += l;
        batch_loss /= static_cast<double>(batch);
        if (!std::isfinite(batch_loss))
            throw std::runtime_error("stage: non-finite loss at step " + std::to_string(step));

        // Gradients reduce in slot order so results do not depend on the
        // worker count.
        NamedGrads grads;
        grads.reserve(trainable.size());
        const float inv_batch = 1.0f / static_cast<float>(batch);
        for (const auto& name : trainable) {
            const auto& t = ck.params.at(name);
            std::vector<float> g(t.numel(), 0.0f);
            for (size_t slot = 0; slot < batch; ++slot) {
                const auto* sg = stores[slot].find(t);
                if (!sg) continue;
                for (size_t i = 0; i < g.size(); ++i) g[i] += (*sg)[i];
            }
            for (auto& v : g) v *= inv_batch;
            grads.emplace_back(name, std::move(g));
        }

        if (spec.optimizer.clip_enabled) clip_grad_norm(grads, spec.optimizer.clip_norm);
        adamw_step(ck.params, grads, ck.opt, spec.optimizer, mask);
        stage_rng.next_u64();

        const int64_t done = step + 1;
        result.curve.push_back({done, "train", batch_loss});
        if (!val.empty() && (done % spec.eval_every == 0 || done == spec.steps)) {
            const double vl = mean_val_loss(ck.params, val, done);
            result.curve.push_back({done, "val", vl});
            if (progress)
                (*progress) << "stage=" << spec.kind << " step=" << done << "/" << spec.steps
                            << " train_loss=" << batch_loss << " val_loss=" << vl << "\n";
        } else if (progress && done % 10 == 0) {
            (*progress) << "stage=" << spec.kind << " step=" << done << "/" << spec.steps
                        << " train_loss=" << batch_loss << "\n";
        }
    }

    ck.rng_state = stage_rng.state();
    return result;
}

std::string render_loss_curve_csv(const std::vector<LossPoint>& curve, uint64_t seed) {
    std::string out = "# seed " + std::to_string(seed) + "\nstep,split,loss\n";
    char buf[64];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%.9g", p.loss);
        out += std::to_string(p.step) + "," + p.split + "," + buf + "\n";
    }
    return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    const auto& params = checkpoint.params;
    std::vector<std::string> moment_names;
    for (const auto& [name, mv] : checkpoint.opt.moments) moment_names.push_back(name);
    std::sort(moment_names.begin(), moment_names.end());

    Json header;
    header["config"] = config_to_json(params.config);
    header["optimizer"] = Json{{"step", checkpoint.opt.step}};
    Json prov = Json::array();
    for (const auto& p : checkpoint.provenance)
        prov.push_back(
            Json{{"kind", p.kind}, {"steps", p.steps}, {"data_fingerprint", p.data_fingerprint}});
    header["provenance"] = prov;
    Json rng = Json::array();
    for (uint64_t w : checkpoint.rng_state) rng.push_back(to_hex(w));
    header["rng_state"] = rng;

    Json dir = Json::array();
    std::string payload;
    uint64_t offset = 0;  // in floats
    auto add_tensor = [&](const std::string& name, const std::vector<size_t>& shape,
                          const std::vector<float>& data) {
        Json entry;
        entry["name"] = name;
        entry["shape"] = shape;
        entry["offset"] = offset;
        dir.push_back(entry);
        const size_t at = payload.size();
        payload.resize(at + data.size() * sizeof(float));
        std::memcpy(payload.data() + at, data.data(), data.size() * sizeof(float));
        offset += data.size();
    };
    for (const auto& [name, t] : params.named) add_tensor(name, t.shape(), t.value());
    for (const auto& name : moment_names) {
        const auto& mv = checkpoint.opt.moments.at(name);
        const auto& shape = params.at(name).shape();
        add_tensor("m:" + name, shape, mv.first);
        add_tensor("v:" + name, shape, mv.second);
    }
    header["tensors"] = dir;

    const std::string header_bytes = header.dump();
    std::string file;
    file.append(kMagic, 4);
    append_u32(file, kCheckpointVersion);
    append_u64(file, header_bytes.size());
    file += header_bytes;
    file += payload;
    append_u32(file, crc_of(file, file.size()));
    write_file(path, file);
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string file = read_file(path);
    if (file.size() < 16) throw std::runtime_error("checkpoint truncated: " + path);
    if (std::memcmp(file.data(), kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    const uint32_t version = read_u32(file, 4);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                                 ": " + path);
    const uint64_t header_len = read_u64(file, 8);
    if (16 + header_len + 4 > file.size())
        throw std::runtime_error("checkpoint truncated: " + path);

    Json header;
    uint64_t payload_floats = 0;
    try {
        header = Json::parse(file.substr(16, header_len));
        for (const auto& entry : header.at("tensors")) {
            uint64_t numel = 1;
            for (const auto& d : entry.at("shape")) numel *= d.get<uint64_t>();
            payload_floats = std::max(payload_floats, entry.at("offset").get<uint64_t>() + numel);
        }
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint header corrupt: " + path + ": " + e.what());
    }

    const size_t expected = 16 + header_len + payload_floats * sizeof(float) + 4;
    if (file.size() < expected) throw std::runtime_error("checkpoint truncated: " + path);
    if (file.size() > expected) throw std::runtime_error("checkpoint size mismatch: " + path);

    const uint32_t want_crc = read_u32(file, file.size() - 4);
    if (crc_of(file, file.size() - 4) != want_crc)
        throw std::runtime_error("checkpoint checksum mismatch: " + path);

    Checkpoint ck;
    try {
        ck.params.config = config_from_json(header.at("config"));
        ck.params.config.validate();
        ck.opt.step = header.at("optimizer").at("step").get<int64_t>();
        for (const auto& p : header.at("provenance"))
            ck.provenance.push_back({p.at("kind").get<std::string>(), p.at("steps").get<int64_t>(),
                                     p.at("data_fingerprint").get<std::string>()});
        const auto& rng = header.at("rng_state");
        if (rng.size() != 4) throw std::runtime_error("rng state malformed");
        for (size_t i = 0; i < 4; ++i)
            ck.rng_state[i] = std::stoull(rng[i].get<std::string>(), nullptr, 16);
    } catch (const std::runtime_error&) {
        throw;
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint header corrupt: " + path + ": " + e.what());
    }

    const char* payload = file.data() + 16 + header_len;
    auto read_tensor = [&](const Json& entry) {
        std::vector<size_t> shape;
        size_t numel = 1;
        for (const auto& d : entry.at("shape")) {
            shape.push_back(d.get<size_t>());
            numel *= shape.back();
        }
        std::vector<float> data(numel);
        std::memcpy(data.data(), payload + entry.at("offset").get<uint64_t>() * sizeof(float),
                    numel * sizeof(float));
        return Tensor::leaf(std::move(shape), std::move(data));
    };

    std::map<std::string, std::vector<float>> pending_m, pending_v;
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        auto t = read_tensor(entry);
        if (starts_with(name, "m:"))
            pending_m[name.substr(2)] = t.value();
        else if (starts_with(name, "v:"))
            pending_v[name.substr(2)] = t.value();
        else
            ck.params.named.emplace_back(name, std::move(t));
    }
    if (pending_m.size() != pending_v.size())
        throw std::runtime_error("checkpoint tensor shape mismatch for moments: " + path);
    for (auto& [name, m] : pending_m) {
        auto vit = pending_v.find(name);
        if (vit == pending_v.end())
            throw std::runtime_error("checkpoint tensor shape mismatch for " + name + ": " + path);
        size_t want = 0;
        for (const auto& [pname, t] : ck.params.named)
            if (pname == name) want = t.numel();
        if (want == 0 || m.size() != want || vit->second.size() != want)
            throw std::runtime_error("checkpoint tensor shape mismatch for " + name + ": " + path);
        ck.opt.moments[name] = {std::move(m), std::move(vit->second)};
    }
    return ck;
}

}  // namespace radsum

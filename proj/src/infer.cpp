#include "radsum/infer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "radsum/pipeline.hpp"
#include "radsum/util.hpp"

namespace radsum {

namespace {

const uint64_t kGenerateTag = fnv1a64("generate");

// Greedy pick: highest logit, lowest id on exact ties.
int argmax_id(const std::vector<float>& logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

// Temperature-scaled softmax in double. Throws on non-finite logits.
std::vector<double> softmax_probs(const std::vector<float>& logits, double temperature) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (float l : logits) {
        if (!std::isfinite(l)) throw std::runtime_error("generate: non-finite logit");
        max_logit = std::max(max_logit, static_cast<double>(l));
    }
    std::vector<double> probs(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp((static_cast<double>(logits[i]) - max_logit) / temperature);
        sum += probs[i];
    }
    const double inv = 1.0 / sum;
    for (double& p : probs) p *= inv;
    return probs;
}

}  // namespace

void SamplerConfig::validate() const {
    if (max_new_tokens < 1) throw std::invalid_argument("sampler: max_new_tokens must be >= 1");
    if (top_k < 1) throw std::invalid_argument("sampler: top_k must be >= 1");
    if (!(top_p > 0.0) || top_p > 1.0)
        throw std::invalid_argument("sampler: top_p must be in (0, 1]");
    if (!(temperature >= 0.0) || !std::isfinite(temperature))
        throw std::invalid_argument("sampler: temperature must be finite and >= 0");
}

std::vector<double> truncate_dist(const std::vector<double>& probs, int top_k, double top_p) {
    if (probs.empty()) throw std::invalid_argument("truncate: empty distribution");
    if (top_k < 1) throw std::invalid_argument("truncate: top_k must be >= 1");
    if (!(top_p > 0.0) || top_p > 1.0)
        throw std::invalid_argument("truncate: top_p must be in (0, 1]");
    double sum = 0.0;
    for (double p : probs) {
        if (!std::isfinite(p) || p < 0.0)
            throw std::invalid_argument("truncate: probabilities must be finite and >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("truncate: probabilities sum to " + std::to_string(sum) +
                                    ", expected 1");

    // Descending probability; stable sort keeps ties in ascending id order.
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs[a] > probs[b]; });

    const size_t keep = std::min<size_t>(top_k, order.size());
    double mass = 0.0;
    size_t support = 0;
    while (support < keep) {
        mass += probs[order[support]];
        ++support;
        if (mass >= top_p) break;
    }

    std::vector<double> out(probs.size(), 0.0);
    const double inv = 1.0 / mass;
    for (size_t i = 0; i < support; ++i) out[order[i]] = probs[order[i]] * inv;
    return out;
}

int sample_token(const std::vector<double>& probs, Rng& rng) {
    if (probs.empty()) throw std::invalid_argument("sample: empty distribution");
    const double r = rng.uniform();
    double cum = 0.0;
    int last_nonzero = -1;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
        if (probs[i] <= 0.0) continue;
        last_nonzero = i;
        cum += probs[i];
        if (r < cum) return i;
    }
    // Rounding can leave cum slightly below 1; the final nonzero entry wins.
    if (last_nonzero < 0) throw std::invalid_argument("sample: distribution has no mass");
    return last_nonzero;
}

GenerationResult generate(const ModelParams& params, const Vocab& vocab,
                          const std::string& findings, const SamplerConfig& config,
                          uint64_t stream_id, std::vector<StepTrace>* trace) {
    config.validate();

    std::vector<int> prompt_ids = {Vocab::kBos};
    for (int id : vocab.encode(summarization_prompt(findings))) prompt_ids.push_back(id);
    const size_t max_seq = static_cast<size_t>(params.config.max_seq);
    if (prompt_ids.size() + static_cast<size_t>(config.max_new_tokens) > max_seq)
        throw std::invalid_argument(
            "generate: prompt length " + std::to_string(prompt_ids.size()) +
            " plus max_new_tokens " + std::to_string(config.max_new_tokens) +
            " exceeds max_seq " + std::to_string(max_seq));

    auto rng = Rng::derive(config.seed, kGenerateTag, stream_id);
    InferenceContext ctx(params);
    std::vector<float> logits;
    for (int id : prompt_ids) logits = ctx.append(id);

    GenerationResult result;
    result.stop_reason = "max_tokens";
    for (int step = 0; step < config.max_new_tokens; ++step) {
        int next;
        if (config.temperature == 0.0) {
            next = argmax_id(logits);
            if (trace) trace->push_back({{next}, next});
        } else {
            const auto probs = softmax_probs(logits, config.temperature);
            const auto truncated = truncate_dist(probs, config.top_k, config.top_p);
            next = sample_token(truncated, rng);
            if (trace) {
                StepTrace t;
                for (int i = 0; i < static_cast<int>(truncated.size()); ++i)
                    if (truncated[i] > 0.0) t.support.push_back(i);
                t.chosen = next;
                trace->push_back(std::move(t));
            }
        }
        if (next == Vocab::kEos) {
            result.stop_reason = "eos";
            break;
        }
        result.token_ids.push_back(next);
        if (step + 1 < config.max_new_tokens) logits = ctx.append(next);
    }

    std::vector<int> content;
    for (int id : result.token_ids)
        if (id >= Vocab::kReserved) content.push_back(id);
    result.text = vocab.decode(content);
    result.n_tokens = static_cast<int>(result.token_ids.size());
    return result;
}

std::vector<GenRecord> generate_batch(const ModelParams& params, const Vocab& vocab,
                                      const std::vector<Report>& reports,
                                      const SamplerConfig& config) {
    config.validate();
    std::vector<GenRecord> out(reports.size());
    parallel_for(reports.size(), [&](size_t i) {
        const auto& r = reports[i];
        auto g = generate(params, vocab, r.findings, config, fnv1a64(r.id));
        out[i] = {r.id, g.text, g.n_tokens, g.stop_reason};
    });
    return out;
}

void save_generations_jsonl(const std::string& path, const std::vector<GenRecord>& records,
                            const Json& meta) {
    std::string out;
    if (!meta.is_null()) out += Json{{"_meta", meta}}.dump() + "\n";
    for (const auto& r : records)
        out += Json{{"id", r.id},
                    {"generated_impression", r.generated_impression},
                    {"n_tokens", r.n_tokens},
                    {"stop_reason", r.stop_reason}}
                   .dump() +
               "\n";
    write_file(path, out);
}

std::pair<std::vector<GenRecord>, Json> load_generations_jsonl(const std::string& path) {
    const std::string content = read_file(path);
    std::vector<GenRecord> records;
    Json meta;
    size_t line_no = 0;
    bool first = true;
    for (const auto& line : split_lines(content)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            Json j = Json::parse(line);
            if (first && j.is_object() && j.contains("_meta")) {
                meta = j["_meta"];
                first = false;
                continue;
            }
            first = false;
            GenRecord r;
            r.id = j.at("id").get<std::string>();
            r.generated_impression = j.at("generated_impression").get<std::string>();
            r.n_tokens = j.at("n_tokens").get<int>();
            r.stop_reason = j.at("stop_reason").get<std::string>();
            records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return {std::move(records), std::move(meta)};
}

}  // namespace radsum

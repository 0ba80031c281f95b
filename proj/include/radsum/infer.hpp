#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "radsum/corpus.hpp"
#include "radsum/model.hpp"
#include "radsum/rng.hpp"
#include "radsum/tokenizer.hpp"

namespace radsum {

struct SamplerConfig {
    int max_new_tokens = 128;
    int top_k = 50;
    double top_p = 0.7;
    double temperature = 1.0;  // 0 means greedy argmax
    uint64_t seed = 0;

    void validate() const;
};

// Top-k followed by nucleus truncation of a probability vector. The input
// must sum to 1 within 1e-6. Keeps the top_k highest entries, then the
// shortest descending-probability prefix whose cumulative mass reaches top_p
// (the entry that crosses the threshold is included; ties broken by lower
// id). Returns a full-size vector, zero outside the support, renormalized to
// sum 1 over it.
std::vector<double> truncate_dist(const std::vector<double>& probs, int top_k, double top_p);

// Inverse-CDF draw over ids in ascending order. Zero-probability entries are
// never returned.
int sample_token(const std::vector<double>& probs, Rng& rng);

// One sampling step recorded by generate when a trace sink is supplied.
struct StepTrace {
    std::vector<int> support;  // ids with nonzero truncated probability
    int chosen = 0;
};

struct GenerationResult {
    std::vector<int> token_ids;  // sampled tokens, excluding the stopping <eos>
    std::string text;            // decoded with reserved tokens dropped
    int n_tokens = 0;            // == token_ids.size()
    std::string stop_reason;     // "eos" or "max_tokens"
};

// Autoregressive sampling from the summarization prompt
// <bos> findings + "\ntl;dr:"; construction matches the finetuning examples.
// Requires prompt length + max_new_tokens <= max_seq. stream_id separates
// concurrent generations under one seed.
GenerationResult generate(const ModelParams& params, const Vocab& vocab,
                          const std::string& findings, const SamplerConfig& config,
                          uint64_t stream_id = 0, std::vector<StepTrace>* trace = nullptr);

struct GenRecord {
    std::string id;
    std::string generated_impression;
    int n_tokens = 0;
    std::string stop_reason;
};

// One generation per report, in parallel. Each report gets a private RNG
// stream derived from (config.seed, fnv1a64(report id)), so results do not
// depend on thread count or corpus order.
std::vector<GenRecord> generate_batch(const ModelParams& params, const Vocab& vocab,
                                      const std::vector<Report>& reports,
                                      const SamplerConfig& config);

void save_generations_jsonl(const std::string& path, const std::vector<GenRecord>& records,
                            const Json& meta);
std::pair<std::vector<GenRecord>, Json> load_generations_jsonl(const std::string& path);

}  // namespace radsum

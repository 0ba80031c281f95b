#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "radsum/corpus.hpp"
#include "radsum/model.hpp"
#include "radsum/optim.hpp"
#include "radsum/tokenizer.hpp"

namespace radsum {

// One padded training sequence. Targets are inputs shifted left by one;
// loss_mask is false wherever the target is padding.
struct TrainExample {
    std::vector<int> input_ids;
    std::vector<int> target_ids;
    std::vector<uint8_t> loss_mask;
};

struct ExampleSet {
    std::vector<TrainExample> examples;
    size_t skipped = 0;  // sequences that exceeded seq_len
};

// <bos> findings <sep> impressions <eos>, loss on every non-pad position.
ExampleSet make_lm_examples(const std::vector<Report>& reports, const Vocab& vocab,
                            size_t seq_len);

// Plain language modelling over free text: <bos> text <eos>, loss everywhere.
ExampleSet make_text_examples(const std::vector<std::string>& texts, const Vocab& vocab,
                              size_t seq_len);

struct PromptPair {
    std::string prompt;
    std::string answer;
};

// <bos> prompt answer <eos>. With mask_prompt (the default) loss covers only
// the answer and <eos>; with it off the prompt tokens are supervised too.
ExampleSet make_pair_examples(const std::vector<PromptPair>& pairs, const Vocab& vocab,
                              size_t seq_len, bool mask_prompt = true);

// Summarization format used for finetuning and zero-shot inference:
// prompt = findings + "\ntl;dr:", answer = impressions.
std::string summarization_prompt(const std::string& findings);
ExampleSet make_prompted_examples(const std::vector<Report>& reports, const Vocab& vocab,
                                  size_t seq_len, bool mask_prompt = true);

// Toy instruction tasks. Weights need not be normalized; scheduling is a
// deterministic largest-deficit interleave, so proportions track weights
// closely even over short streams.
struct TaskSpec {
    std::string name;  // copy, reverse, sort, answer, summarize
    double weight = 1.0;
};
std::vector<TaskSpec> default_instruction_tasks();
std::vector<PromptPair> make_instruction_pairs(size_t n, const std::vector<TaskSpec>& tasks,
                                               uint64_t seed);

// Builtin generic prose used for general pretraining.
std::vector<std::string> make_general_texts(size_t n, uint64_t seed);

// Every word the builtin generators can emit, for vocabulary construction.
std::vector<std::string> builtin_texts();

// Order-insensitive content hash of a dataset, recorded in provenance.
std::string fingerprint_examples(const std::vector<TrainExample>& examples);

struct ProvenanceEntry {
    std::string kind;
    int64_t steps = 0;
    std::string data_fingerprint;
};

struct Checkpoint {
    ModelParams params;
    AdamWState opt;
    std::vector<ProvenanceEntry> provenance;
    std::array<uint64_t, 4> rng_state = {0, 0, 0, 0};
};

Checkpoint init_checkpoint(const ModelConfig& config);

struct StageSpec {
    std::string kind;  // general_pretrain, instruction_tune, dapt, finetune
    int64_t steps = 1;
    int batch_size = 16;
    size_t seq_len = 256;
    AdamWConfig optimizer;
    std::string freeze_policy = "none";
    int64_t eval_every = 100;
    uint64_t seed = 0;

    void validate(const ModelConfig& config) const;
};

struct LossPoint {
    int64_t step = 0;
    std::string split;  // train or val
    double loss = 0.0;
};

struct StageResult {
    Checkpoint checkpoint;
    std::vector<LossPoint> curve;
};

// Runs one stage of mini-batch training. The start checkpoint's provenance
// must end at this stage's legal predecessor, or at an unfinished run of the
// same stage, in which case training resumes at the recorded step. Batches
// are a pure function of (seed, step), so resuming replays the original run
// bit for bit.
StageResult run_stage(const Checkpoint& start, const StageSpec& spec,
                      const std::vector<TrainExample>& train,
                      const std::vector<TrainExample>& val, std::ostream* progress = nullptr);

std::string render_loss_curve_csv(const std::vector<LossPoint>& curve, uint64_t seed);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace radsum

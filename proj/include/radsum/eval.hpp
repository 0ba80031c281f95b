#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "radsum/corpus.hpp"
#include "radsum/grammar.hpp"
#include "radsum/infer.hpp"

namespace radsum {

// Metric-side tokenizer, independent of the model vocabulary: lowercase,
// tokens are maximal alphanumeric runs, everything else separates.
std::vector<std::string> metric_tokenize(const std::string& text);

struct MetricScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Clipped n-gram overlap. Empty candidate or reference scores zero.
MetricScore rouge_n(const std::string& candidate, const std::string& reference, int n);

// Longest-common-subsequence overlap: P = |LCS|/len(cand), R = |LCS|/len(ref).
MetricScore rouge_l(const std::string& candidate, const std::string& reference);

// Sentence-level BLEU-4: geometric mean of 1..4-gram modified precisions
// times the brevity penalty. A zero-count bucket contributes a 1e-9 numerator
// so scores stay finite; exact matches still score exactly 1. Returns [0,1].
double bleu4(const std::string& candidate, const std::string& reference);

// Corpus-level BLEU-4 with n-gram counts pooled over all pairs.
double bleu4_corpus(const std::vector<std::string>& candidates,
                    const std::vector<std::string>& references);

// Grammar-based fact extraction; arbitrary text is tolerated, sentences that
// match no pattern bump *unparsed.
std::vector<Fact> extract_facts(const std::string& text, size_t* unparsed = nullptr);

struct FactCounts {
    size_t matched = 0;
    size_t numeric_mismatch = 0;  // same anatomy/observation/polarity, measurement differs
    size_t missing_fact = 0;      // gold fact with no prediction counterpart
    size_t invented_fact = 0;     // predicted fact with no gold counterpart

    FactCounts& operator+=(const FactCounts& o) {
        matched += o.matched;
        numeric_mismatch += o.numeric_mismatch;
        missing_fact += o.missing_fact;
        invented_fact += o.invented_fact;
        return *this;
    }
};

struct FactScore {
    MetricScore score;  // exact-match precision/recall/F1
    FactCounts counts;
};

// Exact-match F1 over facts plus the hallucination taxonomy. Satisfies
// matched + numeric_mismatch + missing_fact == |gold| and
// invented_fact == |pred| - matched - numeric_mismatch.
FactScore fact_f1(const std::vector<Fact>& pred, const std::vector<Fact>& gold);

struct EvalRow {
    std::string id;
    MetricScore rouge1;
    MetricScore rouge2;
    MetricScore rougel;
    double sentence_bleu = 0.0;
    FactCounts facts;
};

struct EvalReport {
    size_t n_examples = 0;
    double bleu4 = 0.0;  // corpus-pooled, [0,1]
    double rouge1_f1 = 0.0;
    double rouge2_f1 = 0.0;
    double rougel_f1 = 0.0;            // per-example means, [0,1]
    double sentence_bleu_mean = 0.0;   // diagnostic
    MetricScore fact;                  // micro-averaged over pooled counts
    FactCounts fact_counts;            // pooled
    size_t unparsed_reference = 0;
    size_t unparsed_generated = 0;
    std::vector<EvalRow> rows;  // reference order
};

// Scores generations against reference reports matched by id; every id must
// appear on both sides. Gold facts come from the reference's recorded labels
// when present, otherwise from parsing its impression text. BLEU is pooled
// over the corpus, ROUGE averaged per example, fact metrics micro-averaged.
EvalReport evaluate_run(const std::vector<GenRecord>& generations,
                        const std::vector<Report>& references);

// BLEU/ROUGE scaled x100 for display; fact metrics on the [0,1] scale.
std::string render_eval_tsv(const EvalReport& report, uint64_t seed);
Json eval_report_json(const EvalReport& report, uint64_t seed);

// Fixed five-column summary row per run: BLEU4, ROUGE-L, then the two
// external-model columns rendered "n/a", and the fact F1 surrogate last.
std::string render_eval_table(const std::vector<std::pair<std::string, EvalReport>>& runs);

}  // namespace radsum

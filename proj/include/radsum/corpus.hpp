#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "radsum/grammar.hpp"

namespace radsum {

class Vocab;
using Json = nlohmann::ordered_json;

struct RawReport {
    std::string id;
    std::string text;
};

struct Report {
    std::string id;
    std::string findings;
    std::string impressions;
    std::string modality;  // lowercase: ct, mr, xr, us; empty when unknown
    std::string anatomy;   // body region; empty when unknown
    std::optional<std::vector<Fact>> gold_facts;  // present iff synthetic origin
};

// Gold sidecar row emitted next to a synthetic raw corpus so fact labels
// survive preprocessing (reports are re-joined by id).
struct GoldRecord {
    std::string id;
    std::string modality;
    std::string anatomy;
    std::vector<Fact> facts;
};

struct GeneratorSpec {
    size_t n_reports = 0;
    uint64_t seed = 0;
    double abnormality_rate = 0.5;
    int facts_min = 2;
    int facts_max = 5;
    int style_variants = 3;
};

struct SyntheticCorpus {
    std::vector<RawReport> reports;
    std::vector<GoldRecord> gold;  // parallel to reports
};

// Deterministic synthetic clinical-style reports: findings/impression sections,
// bracketed de-id spans, administrative noise lines, and gold facts recorded
// exactly as sampled. Throws std::invalid_argument on a bad spec.
SyntheticCorpus generate_corpus(const GeneratorSpec& spec);

const std::vector<std::string>& default_admin_patterns();

// One lowercase line-prefix pattern per line; '#' starts a comment.
std::vector<std::string> load_admin_patterns(const std::string& path);

// Lowercases, collapses whitespace runs to single spaces (newlines between
// surviving lines preserved), drops empty lines and lines starting with an
// administrative pattern. Idempotent total function.
std::string clean_text(const std::string& raw,
                       const std::vector<std::string>& admin_patterns = default_admin_patterns());

// Replaces every `[** ... **]` span with the literal token `<deid>`. An
// unterminated `[**` masks through end of line and bumps *warning_count.
std::string mask_deid(const std::string& text, size_t* warning_count = nullptr);

struct Sections {
    std::string findings;
    std::string impressions;
};

// Finds `findings:` and `impression:`/`impressions:` headers at line starts
// in cleaned text. Absent when either section is missing or empty. A second
// findings header bumps *warning_count and the first one wins.
std::optional<Sections> split_sections(const std::string& text, size_t* warning_count = nullptr);

struct PreprocessStats {
    size_t n_input = 0;
    size_t n_sectioned = 0;
    size_t deid_warnings = 0;
    size_t header_warnings = 0;
};

struct PreprocessResult {
    std::vector<Report> reports;
    PreprocessStats stats;
};

// clean -> mask -> split per report, in parallel, output in input order.
// Reports whose sections do not parse are dropped (counted in stats). When
// gold is given, matching ids get gold_facts/modality/anatomy attached.
PreprocessResult preprocess_corpus(
    const std::vector<RawReport>& raws, const std::vector<GoldRecord>* gold = nullptr,
    const std::vector<std::string>& admin_patterns = default_admin_patterns());

// Keeps reports with both sections non-empty and
// tokens(findings) + tokens(impressions) + 3 framing tokens < max_tokens.
std::vector<Report> filter_reports(const std::vector<Report>& reports, const Vocab& vocab,
                                   size_t max_tokens = 512);

struct StatsRow {
    std::string dataset;
    std::string section;
    double mean = 0.0;
    double std_dev = 0.0;  // sample (n-1) standard deviation
    bool single_report = false;
};

struct StatsTable {
    std::vector<StatsRow> rows;
};

// Whitespace word-count statistics per section. Throws on an empty corpus;
// a single report reports std 0 with the single_report flag set.
StatsTable corpus_stats(const std::vector<Report>& reports, const std::string& dataset);

// TSV with 2-decimal numbers: dataset, section, mean, std.
std::string render_stats_tsv(const StatsTable& table);

struct CorpusSplits {
    std::vector<Report> train;
    std::vector<Report> val;
    std::vector<Report> test;
};

// Deterministic shuffled partition; val/test sizes floor, remainder to train.
// Ratios must be positive and sum to 1 within 1e-9; needs >= 3 reports.
CorpusSplits split_corpus(const std::vector<Report>& reports, double train_ratio,
                          double val_ratio, double test_ratio, uint64_t seed);

Json fact_to_json(const Fact& fact);
Fact fact_from_json(const Json& j);

// JSONL files. When meta is non-null the first line is {"_meta": meta};
// loaders accept files with or without that header line.
void save_raw_jsonl(const std::string& path, const std::vector<RawReport>& reports,
                    const Json& meta = nullptr);
std::pair<std::vector<RawReport>, Json> load_raw_jsonl(const std::string& path);

void save_report_jsonl(const std::string& path, const std::vector<Report>& reports,
                       const Json& meta = nullptr);
std::pair<std::vector<Report>, Json> load_report_jsonl(const std::string& path);

void save_gold_jsonl(const std::string& path, const std::vector<GoldRecord>& records,
                     const Json& meta = nullptr);
std::pair<std::vector<GoldRecord>, Json> load_gold_jsonl(const std::string& path);

}  // namespace radsum

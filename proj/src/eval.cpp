#include "radsum/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "radsum/util.hpp"

namespace radsum {

namespace {

double harmonic_f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// n-grams as separator-joined keys; '\x1f' cannot appear in metric tokens.
std::unordered_map<std::string, size_t> ngram_counts(const std::vector<std::string>& tokens,
                                                     int n) {
    std::unordered_map<std::string, size_t> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int j = 1; j < n; ++j) {
            key += '\x1f';
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

struct BleuStats {
    size_t clipped[4] = {0, 0, 0, 0};
    size_t total[4] = {0, 0, 0, 0};
    size_t cand_len = 0;
    size_t ref_len = 0;

    void add_pair(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
        cand_len += cand.size();
        ref_len += ref.size();
        for (int n = 1; n <= 4; ++n) {
            const auto cand_counts = ngram_counts(cand, n);
            const auto ref_counts = ngram_counts(ref, n);
            for (const auto& [gram, count] : cand_counts) {
                total[n - 1] += count;
                const auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) clipped[n - 1] += std::min(count, it->second);
            }
        }
    }

    double score() const {
        if (cand_len == 0) return 0.0;
        double log_sum = 0.0;
        for (int n = 0; n < 4; ++n) {
            // Zero-count buckets (including length < n) get the 1e-9 numerator;
            // a full bucket stays an exact integer ratio so identity scores 1.
            const double num = clipped[n] > 0 ? static_cast<double>(clipped[n]) : 1e-9;
            const double den = total[n] > 0 ? static_cast<double>(total[n]) : 1.0;
            log_sum += std::log(num / den);
        }
        const double precision = std::exp(0.25 * log_sum);
        const double bp =
            cand_len >= ref_len
                ? 1.0
                : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
        if (cand_len == ref_len) return precision;  // bp exactly 1, keep identity exact
        return precision * bp;
    }
};

std::string format2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string pad_left(const std::string& s, size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::vector<std::string> metric_tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        const bool alnum = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                           (c >= '0' && c <= '9');
        if (alnum) {
            cur += c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c;
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

MetricScore rouge_n(const std::string& candidate, const std::string& reference, int n) {
    if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
    const auto cand = metric_tokenize(candidate);
    const auto ref = metric_tokenize(reference);
    const auto cand_counts = ngram_counts(cand, n);
    const auto ref_counts = ngram_counts(ref, n);
    size_t cand_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [gram, count] : cand_counts) {
        cand_total += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) overlap += std::min(count, it->second);
    }
    for (const auto& [gram, count] : ref_counts) ref_total += count;
    MetricScore s;
    if (cand_total == 0 || ref_total == 0) return s;
    s.precision = static_cast<double>(overlap) / static_cast<double>(cand_total);
    s.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
    s.f1 = harmonic_f1(s.precision, s.recall);
    return s;
}

MetricScore rouge_l(const std::string& candidate, const std::string& reference) {
    const auto cand = metric_tokenize(candidate);
    const auto ref = metric_tokenize(reference);
    MetricScore s;
    if (cand.empty() || ref.empty()) return s;
    const size_t lcs = lcs_length(cand, ref);
    s.precision = static_cast<double>(lcs) / static_cast<double>(cand.size());
    s.recall = static_cast<double>(lcs) / static_cast<double>(ref.size());
    s.f1 = harmonic_f1(s.precision, s.recall);
    return s;
}

double bleu4(const std::string& candidate, const std::string& reference) {
    BleuStats stats;
    stats.add_pair(metric_tokenize(candidate), metric_tokenize(reference));
    return stats.score();
}

double bleu4_corpus(const std::vector<std::string>& candidates,
                    const std::vector<std::string>& references) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("bleu4: candidate/reference count mismatch");
    BleuStats stats;
    for (size_t i = 0; i < candidates.size(); ++i)
        stats.add_pair(metric_tokenize(candidates[i]), metric_tokenize(references[i]));
    return stats.score();
}

std::vector<Fact> extract_facts(const std::string& text, size_t* unparsed) {
    const auto parsed = grammar::parse_impression(text);
    if (unparsed) *unparsed += parsed.unparsed_count;
    return parsed.facts;
}

FactScore fact_f1(const std::vector<Fact>& pred, const std::vector<Fact>& gold) {
    std::vector<bool> gold_used(gold.size(), false);
    std::vector<bool> pred_used(pred.size(), false);
    FactScore out;

    for (size_t p = 0; p < pred.size(); ++p) {
        for (size_t g = 0; g < gold.size(); ++g) {
            if (gold_used[g] || pred[p] != gold[g]) continue;
            gold_used[g] = pred_used[p] = true;
            ++out.counts.matched;
            break;
        }
    }
    // Remaining pairs that agree up to the measurement are numeric errors,
    // not inventions.
    for (size_t p = 0; p < pred.size(); ++p) {
        if (pred_used[p]) continue;
        for (size_t g = 0; g < gold.size(); ++g) {
            if (gold_used[g]) continue;
            if (pred[p].anatomy == gold[g].anatomy &&
                pred[p].observation == gold[g].observation &&
                pred[p].polarity == gold[g].polarity) {
                gold_used[g] = pred_used[p] = true;
                ++out.counts.numeric_mismatch;
                break;
            }
        }
    }
    for (size_t g = 0; g < gold.size(); ++g)
        if (!gold_used[g]) ++out.counts.missing_fact;
    for (size_t p = 0; p < pred.size(); ++p)
        if (!pred_used[p]) ++out.counts.invented_fact;

    if (!pred.empty())
        out.score.precision =
            static_cast<double>(out.counts.matched) / static_cast<double>(pred.size());
    if (!gold.empty())
        out.score.recall =
            static_cast<double>(out.counts.matched) / static_cast<double>(gold.size());
    out.score.f1 = harmonic_f1(out.score.precision, out.score.recall);
    return out;
}

EvalReport evaluate_run(const std::vector<GenRecord>& generations,
                        const std::vector<Report>& references) {
    std::map<std::string, const GenRecord*> by_id;
    for (const auto& g : generations) {
        if (!by_id.emplace(g.id, &g).second)
            throw std::invalid_argument("eval: duplicate generation id " + g.id);
    }
    std::vector<std::string> missing_gen, missing_ref;
    std::map<std::string, bool> ref_seen;
    for (const auto& r : references) {
        ref_seen[r.id] = true;
        if (!by_id.count(r.id)) missing_gen.push_back(r.id);
    }
    for (const auto& g : generations)
        if (!ref_seen.count(g.id)) missing_ref.push_back(g.id);
    if (!missing_gen.empty() || !missing_ref.empty()) {
        std::string msg = "eval: id mismatch;";
        if (!missing_gen.empty()) {
            msg += " missing generations for:";
            for (const auto& id : missing_gen) msg += " " + id;
        }
        if (!missing_ref.empty()) {
            msg += " missing references for:";
            for (const auto& id : missing_ref) msg += " " + id;
        }
        throw std::invalid_argument(msg);
    }

    EvalReport report;
    report.n_examples = references.size();
    report.rows.resize(references.size());

    std::vector<size_t> unparsed_ref(references.size(), 0);
    std::vector<size_t> unparsed_gen(references.size(), 0);
    parallel_for(references.size(), [&](size_t i) {
        const auto& ref = references[i];
        const auto& gen = *by_id.at(ref.id);
        EvalRow& row = report.rows[i];
        row.id = ref.id;
        row.rouge1 = rouge_n(gen.generated_impression, ref.impressions, 1);
        row.rouge2 = rouge_n(gen.generated_impression, ref.impressions, 2);
        row.rougel = rouge_l(gen.generated_impression, ref.impressions);
        row.sentence_bleu = bleu4(gen.generated_impression, ref.impressions);
        const auto pred = extract_facts(gen.generated_impression, &unparsed_gen[i]);
        const auto gold = ref.gold_facts ? *ref.gold_facts
                                         : extract_facts(ref.impressions, &unparsed_ref[i]);
        row.facts = fact_f1(pred, gold).counts;
    });

    std::vector<std::string> cands, refs;
    cands.reserve(references.size());
    refs.reserve(references.size());
    for (const auto& ref : references) {
        cands.push_back(by_id.at(ref.id)->generated_impression);
        refs.push_back(ref.impressions);
    }
    report.bleu4 = bleu4_corpus(cands, refs);

    size_t pred_total = 0, gold_total = 0;
    for (size_t i = 0; i < report.rows.size(); ++i) {
        const auto& row = report.rows[i];
        report.rouge1_f1 += row.rouge1.f1;
        report.rouge2_f1 += row.rouge2.f1;
        report.rougel_f1 += row.rougel.f1;
        report.sentence_bleu_mean += row.sentence_bleu;
        report.fact_counts += row.facts;
        pred_total += row.facts.matched + row.facts.numeric_mismatch + row.facts.invented_fact;
        gold_total += row.facts.matched + row.facts.numeric_mismatch + row.facts.missing_fact;
        report.unparsed_reference += unparsed_ref[i];
        report.unparsed_generated += unparsed_gen[i];
    }
    if (!references.empty()) {
        const double n = static_cast<double>(references.size());
        report.rouge1_f1 /= n;
        report.rouge2_f1 /= n;
        report.rougel_f1 /= n;
        report.sentence_bleu_mean /= n;
    }
    if (pred_total > 0)
        report.fact.precision =
            static_cast<double>(report.fact_counts.matched) / static_cast<double>(pred_total);
    if (gold_total > 0)
        report.fact.recall =
            static_cast<double>(report.fact_counts.matched) / static_cast<double>(gold_total);
    report.fact.f1 = harmonic_f1(report.fact.precision, report.fact.recall);
    return report;
}

std::string render_eval_tsv(const EvalReport& r, uint64_t seed) {
    std::string out = "# seed " + std::to_string(seed) + "\nmetric\tvalue\n";
    auto row = [&](const std::string& name, const std::string& value) {
        out += name + "\t" + value + "\n";
    };
    row("n_examples", std::to_string(r.n_examples));
    row("bleu4", format2(r.bleu4 * 100.0));
    row("rouge1_f1", format2(r.rouge1_f1 * 100.0));
    row("rouge2_f1", format2(r.rouge2_f1 * 100.0));
    row("rougel_f1", format2(r.rougel_f1 * 100.0));
    row("sentence_bleu_mean", format2(r.sentence_bleu_mean * 100.0));
    row("fact_precision", format_fixed(r.fact.precision, 4));
    row("fact_recall", format_fixed(r.fact.recall, 4));
    row("fact_f1", format_fixed(r.fact.f1, 4));
    row("matched", std::to_string(r.fact_counts.matched));
    row("numeric_mismatch", std::to_string(r.fact_counts.numeric_mismatch));
    row("missing_fact", std::to_string(r.fact_counts.missing_fact));
    row("invented_fact", std::to_string(r.fact_counts.invented_fact));
    row("unparsed_reference", std::to_string(r.unparsed_reference));
    row("unparsed_generated", std::to_string(r.unparsed_generated));
    return out;
}

Json eval_report_json(const EvalReport& r, uint64_t seed) {
    Json j;
    j["seed"] = seed;
    j["n_examples"] = r.n_examples;
    j["bleu4"] = r.bleu4;
    j["rouge1_f1"] = r.rouge1_f1;
    j["rouge2_f1"] = r.rouge2_f1;
    j["rougel_f1"] = r.rougel_f1;
    j["sentence_bleu_mean"] = r.sentence_bleu_mean;
    j["fact"] = Json{{"precision", r.fact.precision},
                     {"recall", r.fact.recall},
                     {"f1", r.fact.f1}};
    j["counts"] = Json{{"matched", r.fact_counts.matched},
                       {"numeric_mismatch", r.fact_counts.numeric_mismatch},
                       {"missing_fact", r.fact_counts.missing_fact},
                       {"invented_fact", r.fact_counts.invented_fact}};
    j["unparsed_reference"] = r.unparsed_reference;
    j["unparsed_generated"] = r.unparsed_generated;
    Json rows = Json::array();
    for (const auto& row : r.rows)
        rows.push_back(Json{{"id", row.id},
                            {"rouge1_f1", row.rouge1.f1},
                            {"rouge2_f1", row.rouge2.f1},
                            {"rougel_f1", row.rougel.f1},
                            {"sentence_bleu", row.sentence_bleu},
                            {"matched", row.facts.matched},
                            {"numeric_mismatch", row.facts.numeric_mismatch},
                            {"missing_fact", row.facts.missing_fact},
                            {"invented_fact", row.facts.invented_fact}});
    j["examples"] = std::move(rows);
    return j;
}

std::string render_eval_table(const std::vector<std::pair<std::string, EvalReport>>& runs) {
    const size_t name_w = 18;
    const std::vector<std::string> cols = {"BLEU4", "ROUGE-L", "BertScore", "F1-cheXbert",
                                           "F1-RadGraph*"};
    const size_t col_w = 12;
    std::string out = pad_right("run", name_w);
    for (const auto& c : cols) out += " | " + pad_left(c, col_w);
    out += "\n" + std::string(name_w + cols.size() * (col_w + 3), '-') + "\n";
    for (const auto& [name, r] : runs) {
        out += pad_right(name, name_w);
        out += " | " + pad_left(format2(r.bleu4 * 100.0), col_w);
        out += " | " + pad_left(format2(r.rougel_f1 * 100.0), col_w);
        out += " | " + pad_left("n/a", col_w);
        out += " | " + pad_left("n/a", col_w);
        out += " | " + pad_left(format2(r.fact.f1), col_w);
        out += "\n";
    }
    out += "* fact-level F1 from the report grammar; stands in for the external-model column.\n";
    return out;
}

}  // namespace radsum

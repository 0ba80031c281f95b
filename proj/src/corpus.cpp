#include "radsum/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "radsum/rng.hpp"
#include "radsum/tokenizer.hpp"
#include "radsum/util.hpp"

namespace radsum {

namespace {

const uint64_t kTagReport = fnv1a64("report");
const uint64_t kTagSplit = fnv1a64("corpus-split");

std::string join_lines(const std::vector<std::string>& lines, size_t from, size_t to) {
    std::string out;
    for (size_t i = from; i < to; ++i) {
        if (!out.empty()) out.push_back('\n');
        out += lines[i];
    }
    return out;
}

std::string capitalize(std::string s) {
    if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
}

std::string make_date(Rng& rng) {
    return "[**" + std::to_string(2100 + rng.uniform_below(100)) + "-" +
           std::to_string(1 + rng.uniform_below(12)) + "-" +
           std::to_string(1 + rng.uniform_below(28)) + "**]";
}

std::string make_name(Rng& rng) {
    static const std::vector<std::string> kNames = {"Last Name",      "First Name", "Doctor Smith",
                                                    "Attending Name", "Hospital",   "Clinic"};
    return "[**" + kNames[rng.uniform_below(kNames.size())] + "**]";
}

std::string modality_prose(const std::string& modality) {
    if (modality == "ct") return "ct scan";
    if (modality == "mr") return "mr scan";
    if (modality == "xr") return "radiograph";
    if (modality == "us") return "ultrasound";
    return modality;
}

std::string pick_modality(const std::string& region, Rng& rng) {
    static const std::unordered_map<std::string, std::vector<std::string>> kByRegion = {
        {"head", {"ct", "mr"}},
        {"chest", {"ct", "xr"}},
        {"abdomen", {"ct", "us", "mr"}},
        {"spine", {"mr", "ct"}},
        {"extremity", {"xr", "mr"}},
    };
    const auto& options = kByRegion.at(region);
    return options[rng.uniform_below(options.size())];
}

std::pair<RawReport, GoldRecord> generate_report(const GeneratorSpec& spec, size_t index) {
    Rng rng = Rng::derive(spec.seed, kTagReport, index);

    const auto& regions = grammar::regions();
    const std::string region = regions[rng.uniform_below(regions.size())];
    const std::string modality = pick_modality(region, rng);
    const bool abnormal = rng.uniform() < spec.abnormality_rate;
    const size_t n_facts =
        static_cast<size_t>(spec.facts_min) +
        rng.uniform_below(static_cast<uint64_t>(spec.facts_max - spec.facts_min) + 1);

    const auto& anats = grammar::anatomies(region);
    const auto& obs = grammar::observations();
    const auto& units = grammar::units();

    std::vector<Fact> facts;
    std::vector<std::pair<size_t, size_t>> used;
    while (facts.size() < n_facts) {
        const size_t ai = rng.uniform_below(anats.size());
        const size_t oi = rng.uniform_below(obs.size());
        if (std::find(used.begin(), used.end(), std::make_pair(ai, oi)) != used.end()) continue;
        used.emplace_back(ai, oi);

        Fact f;
        f.anatomy = anats[ai];
        f.observation = obs[oi];
        if (!abnormal) {
            f.polarity = Polarity::absent;
        } else if (facts.empty()) {
            f.polarity = rng.uniform_below(2) ? Polarity::stable : Polarity::present;
        } else {
            const double r = rng.uniform();
            f.polarity = r < 0.4 ? Polarity::present : (r < 0.6 ? Polarity::stable : Polarity::absent);
        }
        if (f.polarity != Polarity::absent && rng.uniform() < 0.5) {
            Measurement m;
            m.a = static_cast<double>(5 + rng.uniform_below(95)) / 10.0;
            m.b = static_cast<double>(5 + rng.uniform_below(95)) / 10.0;
            m.unit = units[rng.uniform_below(units.size())];
            f.measurement = m;
        }
        facts.push_back(std::move(f));
    }
    if (region == "head" && rng.uniform() < 0.3) facts.push_back(grammar::midline_shift_fact());

    const size_t v0 = rng.uniform_below(static_cast<uint64_t>(spec.style_variants));

    // Findings prose, one sentence per fact, phrasing rotated per report.
    std::vector<std::string> finding_sentences;
    for (size_t k = 0; k < facts.size(); ++k)
        finding_sentences.push_back(grammar::render_finding_sentence(facts[k], v0 + k));

    const std::string impression = grammar::render_impression(facts);

    // Raw assembly: mixed case, double spaces, blanks, de-id spans and
    // administrative noise, all of which preprocessing must undo.
    std::vector<std::string> noise;
    {
        const std::string date = make_date(rng);
        const std::string name = make_name(rng);
        std::vector<std::string> pool = {
            "Dictated by: Dr. " + name,
            "Signed: " + make_name(rng) + " on " + date,
            "Report Status: Final",
            "Technologist: " + make_name(rng),
            "CC: " + make_name(rng) + " office",
            "Attending: " + make_name(rng),
        };
        const size_t n_noise = 1 + rng.uniform_below(3);
        for (size_t k = 0; k < n_noise; ++k)
            noise.push_back(pool[rng.uniform_below(pool.size())]);
    }

    std::vector<std::string> lines;
    switch (rng.uniform_below(3)) {
        case 0:
            lines.push_back("INDICATION: " + region + " evaluation for " + make_name(rng) +
                            " on " + make_date(rng) + ".");
            break;
        case 1:
            lines.push_back("INDICATION: follow up of known findings for " + make_name(rng) + ".");
            break;
        default:
            lines.push_back("INDICATION: persistent symptoms since " + make_date(rng) + ".");
            break;
    }
    lines.push_back("TECHNIQUE: " + modality_prose(modality) + " of the " + region + ".");
    if (rng.uniform_below(2)) lines.push_back("COMPARISON: prior study of " + make_date(rng) + ".");
    lines.push_back(noise[0]);
    lines.push_back("");
    lines.push_back("FINDINGS:");
    for (size_t k = 0; k < finding_sentences.size();) {
        // One or two sentences per line; pairs joined with a double space.
        if (k + 1 < finding_sentences.size() && rng.uniform_below(2)) {
            lines.push_back(capitalize(finding_sentences[k]) + "  " +
                            capitalize(finding_sentences[k + 1]));
            k += 2;
        } else {
            lines.push_back(capitalize(finding_sentences[k]));
            k += 1;
        }
    }
    lines.push_back("");
    const std::string header = rng.uniform_below(2) ? "IMPRESSION:" : "IMPRESSIONS:";
    if (rng.uniform_below(2)) {
        lines.push_back(header + " " + impression);
    } else {
        lines.push_back(header);
        lines.push_back(capitalize(impression));
    }
    for (size_t k = 1; k < noise.size(); ++k) lines.push_back(noise[k]);

    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06zu", index);

    RawReport raw{std::string(id), join_lines(lines, 0, lines.size())};
    GoldRecord gold{std::string(id), modality, region, std::move(facts)};
    return {std::move(raw), std::move(gold)};
}

}  // namespace

SyntheticCorpus generate_corpus(const GeneratorSpec& spec) {
    if (spec.n_reports == 0) throw std::invalid_argument("generate_corpus: n_reports must be >= 1");
    if (spec.abnormality_rate < 0.0 || spec.abnormality_rate > 1.0)
        throw std::invalid_argument("generate_corpus: abnormality_rate outside [0, 1]");
    if (spec.facts_min < 1 || spec.facts_max < spec.facts_min || spec.facts_max > 24)
        throw std::invalid_argument("generate_corpus: facts_per_report range must satisfy 1 <= min <= max <= 24");
    if (spec.style_variants < 1)
        throw std::invalid_argument("generate_corpus: style_variants must be >= 1");

    SyntheticCorpus out;
    out.reports.resize(spec.n_reports);
    out.gold.resize(spec.n_reports);
    parallel_for(spec.n_reports, [&](size_t i) {
        auto [raw, gold] = generate_report(spec, i);
        out.reports[i] = std::move(raw);
        out.gold[i] = std::move(gold);
    });
    return out;
}

const std::vector<std::string>& default_admin_patterns() {
    static const std::vector<std::string> kPatterns = {
        "dictated by:",   "signed:",        "attending:",  "technologist:",
        "report status:", "cc:",            "transcribed by:", "electronically signed",
        "job number:",    "final report",
    };
    return kPatterns;
}

std::vector<std::string> load_admin_patterns(const std::string& path) {
    std::vector<std::string> out;
    for (const auto& line : split_lines(read_file(path))) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        out.push_back(lowercase_ascii(t));
    }
    return out;
}

std::string clean_text(const std::string& raw, const std::vector<std::string>& admin_patterns) {
    std::vector<std::string> kept;
    for (const auto& line : split_lines(raw)) {
        const auto words = split_ws(line);
        std::string l;
        for (size_t i = 0; i < words.size(); ++i) {
            if (i) l.push_back(' ');
            l += lowercase_ascii(words[i]);
        }
        if (l.empty()) continue;
        bool admin = false;
        for (const auto& p : admin_patterns) admin = admin || starts_with(l, p);
        if (admin) continue;
        kept.push_back(std::move(l));
    }
    return join_lines(kept, 0, kept.size());
}

std::string mask_deid(const std::string& text, size_t* warning_count) {
    std::string out;
    out.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        if (text.compare(i, 3, "[**") == 0) {
            const size_t close = text.find("**]", i + 3);
            const size_t eol = text.find('\n', i);
            if (close != std::string::npos && (eol == std::string::npos || close < eol)) {
                out += "<deid>";
                i = close + 3;
            } else {
                // Unterminated span: mask through end of line.
                out += "<deid>";
                i = eol == std::string::npos ? text.size() : eol;
                if (warning_count) ++*warning_count;
            }
        } else {
            out.push_back(text[i]);
            ++i;
        }
    }
    return out;
}

namespace {

const std::vector<std::string>& recognized_headers() {
    static const std::vector<std::string> kHeaders = {
        "findings:",   "impression:", "impressions:",   "indication:", "technique:",
        "comparison:", "history:",    "recommendation:", "addendum:"};
    return kHeaders;
}

bool is_recognized_header(const std::string& lower_line) {
    for (const auto& h : recognized_headers())
        if (starts_with(lower_line, h)) return true;
    return false;
}

}  // namespace

std::optional<Sections> split_sections(const std::string& text, size_t* warning_count) {
    const auto lines = split_lines(text);
    std::vector<std::string> lower;
    lower.reserve(lines.size());
    for (const auto& l : lines) lower.push_back(lowercase_ascii(l));

    size_t findings_idx = lines.size();
    for (size_t i = 0; i < lines.size(); ++i) {
        if (!starts_with(lower[i], "findings:")) continue;
        if (findings_idx == lines.size()) {
            findings_idx = i;
        } else if (warning_count) {
            ++*warning_count;
        }
    }
    if (findings_idx == lines.size()) return std::nullopt;

    size_t impression_idx = lines.size();
    size_t header_len = 0;
    for (size_t i = findings_idx + 1; i < lines.size(); ++i) {
        if (starts_with(lower[i], "impressions:")) {
            impression_idx = i;
            header_len = 12;
            break;
        }
        if (starts_with(lower[i], "impression:")) {
            impression_idx = i;
            header_len = 11;
            break;
        }
    }
    if (impression_idx == lines.size()) return std::nullopt;

    size_t end_idx = lines.size();
    for (size_t i = impression_idx + 1; i < lines.size(); ++i) {
        if (is_recognized_header(lower[i])) {
            end_idx = i;
            break;
        }
    }

    std::string findings = trim(lines[findings_idx].substr(9));
    {
        const std::string rest = join_lines(lines, findings_idx + 1, impression_idx);
        if (!rest.empty()) findings += (findings.empty() ? "" : "\n") + rest;
    }
    std::string impressions = trim(lines[impression_idx].substr(header_len));
    {
        const std::string rest = join_lines(lines, impression_idx + 1, end_idx);
        if (!rest.empty()) impressions += (impressions.empty() ? "" : "\n") + rest;
    }
    if (trim(findings).empty() || trim(impressions).empty()) return std::nullopt;
    return Sections{std::move(findings), std::move(impressions)};
}

PreprocessResult preprocess_corpus(const std::vector<RawReport>& raws,
                                   const std::vector<GoldRecord>* gold,
                                   const std::vector<std::string>& admin_patterns) {
    {
        std::unordered_set<std::string> seen;
        for (const auto& r : raws) {
            if (r.id.empty()) throw std::runtime_error("preprocess: empty report id");
            if (!seen.insert(r.id).second)
                throw std::runtime_error("preprocess: duplicate report id " + r.id);
        }
    }
    std::unordered_map<std::string, const GoldRecord*> by_id;
    if (gold)
        for (const auto& g : *gold) by_id.emplace(g.id, &g);

    const size_t n = raws.size();
    std::vector<std::optional<Report>> slots(n);
    std::vector<size_t> deid_w(n, 0), header_w(n, 0);
    parallel_for(n, [&](size_t i) {
        const std::string masked = mask_deid(clean_text(raws[i].text, admin_patterns), &deid_w[i]);
        auto sections = split_sections(masked, &header_w[i]);
        if (!sections) return;
        Report r;
        r.id = raws[i].id;
        r.findings = std::move(sections->findings);
        r.impressions = std::move(sections->impressions);
        if (auto it = by_id.find(r.id); it != by_id.end()) {
            r.modality = it->second->modality;
            r.anatomy = it->second->anatomy;
            r.gold_facts = it->second->facts;
        }
        slots[i] = std::move(r);
    });

    PreprocessResult out;
    out.stats.n_input = n;
    for (size_t i = 0; i < n; ++i) {
        out.stats.deid_warnings += deid_w[i];
        out.stats.header_warnings += header_w[i];
        if (slots[i]) out.reports.push_back(std::move(*slots[i]));
    }
    out.stats.n_sectioned = out.reports.size();
    return out;
}

std::vector<Report> filter_reports(const std::vector<Report>& reports, const Vocab& vocab,
                                   size_t max_tokens) {
    std::vector<Report> kept;
    for (const auto& r : reports) {
        if (r.findings.empty() || r.impressions.empty()) continue;
        const size_t total =
            vocab.encode(r.findings).size() + vocab.encode(r.impressions).size() + 3;
        if (total < max_tokens) kept.push_back(r);
    }
    return kept;
}

namespace {

StatsRow section_stats(const std::vector<size_t>& counts, const std::string& dataset,
                       const std::string& section) {
    double mean = 0.0;
    for (size_t c : counts) mean += static_cast<double>(c);
    mean /= static_cast<double>(counts.size());
    double var = 0.0;
    if (counts.size() > 1) {
        for (size_t c : counts) {
            const double d = static_cast<double>(c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(counts.size() - 1);
    }
    return StatsRow{dataset, section, mean, std::sqrt(var), counts.size() == 1};
}

}  // namespace

StatsTable corpus_stats(const std::vector<Report>& reports, const std::string& dataset) {
    if (reports.empty()) throw std::runtime_error("corpus_stats: empty corpus");
    std::vector<size_t> f_counts, i_counts;
    for (const auto& r : reports) {
        f_counts.push_back(split_ws(r.findings).size());
        i_counts.push_back(split_ws(r.impressions).size());
    }
    StatsTable t;
    t.rows.push_back(section_stats(f_counts, dataset, "findings"));
    t.rows.push_back(section_stats(i_counts, dataset, "impressions"));
    return t;
}

std::string render_stats_tsv(const StatsTable& table) {
    std::string out = "dataset\tsection\tmean\tstd\tnote\n";
    for (const auto& r : table.rows) {
        out += r.dataset + "\t" + r.section + "\t" + format_fixed(r.mean, 2) + "\t" +
               format_fixed(r.std_dev, 2) + "\t" + (r.single_report ? "single_report" : "") + "\n";
    }
    return out;
}

CorpusSplits split_corpus(const std::vector<Report>& reports, double train_ratio,
                          double val_ratio, double test_ratio, uint64_t seed) {
    if (train_ratio <= 0.0 || val_ratio <= 0.0 || test_ratio <= 0.0)
        throw std::invalid_argument("split_corpus: ratios must be positive");
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw std::invalid_argument("split_corpus: ratios must sum to 1");
    if (reports.size() < 3)
        throw std::invalid_argument("split_corpus: need at least 3 reports");

    const size_t n = reports.size();
    const size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * val_ratio));
    const size_t n_test = static_cast<size_t>(std::floor(static_cast<double>(n) * test_ratio));
    const size_t n_train = n - n_val - n_test;

    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = Rng::derive(seed, kTagSplit);
    rng.shuffle(idx);

    auto take = [&](size_t from, size_t count) {
        std::vector<size_t> part(idx.begin() + static_cast<long>(from),
                                 idx.begin() + static_cast<long>(from + count));
        std::sort(part.begin(), part.end());
        std::vector<Report> out;
        out.reserve(count);
        for (size_t i : part) out.push_back(reports[i]);
        return out;
    };
    CorpusSplits s;
    s.train = take(0, n_train);
    s.val = take(n_train, n_val);
    s.test = take(n_train + n_val, n_test);
    return s;
}

Json fact_to_json(const Fact& fact) {
    Json j;
    j["anatomy"] = fact.anatomy;
    j["observation"] = fact.observation;
    j["polarity"] = polarity_name(fact.polarity);
    if (fact.measurement) {
        j["measurement"] = Json{{"a", fact.measurement->a},
                                {"b", fact.measurement->b},
                                {"unit", fact.measurement->unit}};
    }
    return j;
}

Fact fact_from_json(const Json& j) {
    Fact f;
    f.anatomy = j.at("anatomy").get<std::string>();
    f.observation = j.at("observation").get<std::string>();
    f.polarity = polarity_from_name(j.at("polarity").get<std::string>());
    if (j.contains("measurement")) {
        const Json& m = j.at("measurement");
        Measurement meas;
        meas.a = m.at("a").get<double>();
        meas.b = m.at("b").get<double>();
        meas.unit = m.at("unit").get<std::string>();
        if (meas.a <= 0.0 || meas.b <= 0.0)
            throw std::runtime_error("fact measurement values must be positive");
        f.measurement = meas;
    }
    return f;
}

namespace {

// Shared JSONL scaffolding: optional {"_meta": ...} first line, one record
// per following line. Errors carry path and 1-based line number.
template <typename Fn>
Json load_jsonl(const std::string& path, const Fn& on_record) {
    const std::string content = read_file(path);
    Json meta;
    size_t line_no = 0;
    bool first = true;
    for (const auto& line : split_lines(content)) {
        ++line_no;
        if (trim(line).empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (first && j.is_object() && j.contains("_meta")) {
            meta = j["_meta"];
            first = false;
            continue;
        }
        first = false;
        try {
            on_record(j);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return meta;
}

void save_jsonl(const std::string& path, const Json& meta, const std::vector<Json>& records) {
    std::string out;
    if (!meta.is_null()) out += Json{{"_meta", meta}}.dump() + "\n";
    for (const auto& j : records) out += j.dump() + "\n";
    write_file(path, out);
}

}  // namespace

void save_raw_jsonl(const std::string& path, const std::vector<RawReport>& reports,
                    const Json& meta) {
    std::vector<Json> records;
    records.reserve(reports.size());
    for (const auto& r : reports) records.push_back(Json{{"id", r.id}, {"text", r.text}});
    save_jsonl(path, meta, records);
}

std::pair<std::vector<RawReport>, Json> load_raw_jsonl(const std::string& path) {
    std::vector<RawReport> reports;
    Json meta = load_jsonl(path, [&](const Json& j) {
        reports.push_back(RawReport{j.at("id").get<std::string>(), j.at("text").get<std::string>()});
    });
    return {std::move(reports), std::move(meta)};
}

void save_report_jsonl(const std::string& path, const std::vector<Report>& reports,
                       const Json& meta) {
    std::vector<Json> records;
    records.reserve(reports.size());
    for (const auto& r : reports) {
        Json j;
        j["id"] = r.id;
        j["findings"] = r.findings;
        j["impressions"] = r.impressions;
        if (!r.modality.empty()) j["modality"] = r.modality;
        if (!r.anatomy.empty()) j["anatomy"] = r.anatomy;
        if (r.gold_facts) {
            Json facts = Json::array();
            for (const auto& f : *r.gold_facts) facts.push_back(fact_to_json(f));
            j["gold_facts"] = std::move(facts);
        }
        records.push_back(std::move(j));
    }
    save_jsonl(path, meta, records);
}

std::pair<std::vector<Report>, Json> load_report_jsonl(const std::string& path) {
    std::vector<Report> reports;
    Json meta = load_jsonl(path, [&](const Json& j) {
        Report r;
        r.id = j.at("id").get<std::string>();
        r.findings = j.at("findings").get<std::string>();
        r.impressions = j.at("impressions").get<std::string>();
        r.modality = j.value("modality", std::string());
        r.anatomy = j.value("anatomy", std::string());
        if (j.contains("gold_facts")) {
            std::vector<Fact> facts;
            for (const auto& fj : j.at("gold_facts")) facts.push_back(fact_from_json(fj));
            r.gold_facts = std::move(facts);
        }
        reports.push_back(std::move(r));
    });
    return {std::move(reports), std::move(meta)};
}

void save_gold_jsonl(const std::string& path, const std::vector<GoldRecord>& records,
                     const Json& meta) {
    std::vector<Json> out;
    out.reserve(records.size());
    for (const auto& g : records) {
        Json facts = Json::array();
        for (const auto& f : g.facts) facts.push_back(fact_to_json(f));
        out.push_back(Json{{"id", g.id},
                           {"modality", g.modality},
                           {"anatomy", g.anatomy},
                           {"facts", std::move(facts)}});
    }
    save_jsonl(path, meta, out);
}

std::pair<std::vector<GoldRecord>, Json> load_gold_jsonl(const std::string& path) {
    std::vector<GoldRecord> records;
    Json meta = load_jsonl(path, [&](const Json& j) {
        GoldRecord g;
        g.id = j.at("id").get<std::string>();
        g.modality = j.value("modality", std::string());
        g.anatomy = j.value("anatomy", std::string());
        for (const auto& fj : j.at("facts")) g.facts.push_back(fact_from_json(fj));
        records.push_back(std::move(g));
    });
    return {std::move(records), std::move(meta)};
}

}  // namespace radsum

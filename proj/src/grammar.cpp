#include "radsum/grammar.hpp"

#include <cstdlib>
#include <stdexcept>

#include "radsum/tokenizer.hpp"
#include "radsum/util.hpp"

namespace radsum {

std::string polarity_name(Polarity p) {
    switch (p) {
        case Polarity::present: return "present";
        case Polarity::absent: return "absent";
        case Polarity::stable: return "stable";
    }
    throw std::invalid_argument("polarity_name: bad enum value");
}

Polarity polarity_from_name(const std::string& name) {
    if (name == "present") return Polarity::present;
    if (name == "absent") return Polarity::absent;
    if (name == "stable") return Polarity::stable;
    throw std::invalid_argument("unknown polarity: " + name);
}

namespace grammar {

namespace {

bool all_digits(const std::string& t) {
    if (t.empty()) return false;
    for (char c : t)
        if (c < '0' || c > '9') return false;
    return true;
}

bool alpha_word(const std::string& t) {
    if (t.empty()) return false;
    for (char c : t)
        if (c < 'a' || c > 'z') return false;
    return true;
}

// Accepts "7" or "6.4" style tokens; rejects zero and negatives.
bool parse_positive_number(const std::string& t, double& out) {
    bool seen_digit = false, seen_dot = false;
    for (char c : t) {
        if (c >= '0' && c <= '9') {
            seen_digit = true;
        } else if (c == '.' && !seen_dot) {
            seen_dot = true;
        } else {
            return false;
        }
    }
    if (!seen_digit) return false;
    out = std::strtod(t.c_str(), nullptr);
    return out > 0.0;
}

std::string join_words(const std::vector<std::string>& words, size_t from, size_t to) {
    std::string out;
    for (size_t i = from; i < to; ++i) {
        if (i > from) out.push_back(' ');
        out += words[i];
    }
    return out;
}

std::optional<Fact> match_sentence(const std::vector<std::string>& s) {
    static const std::vector<std::string> kMidline = {"no",       "shift",   "of",
                                                      "normally", "midline", "structures"};
    if (s == kMidline) return midline_shift_fact();

    if (s[0] == "no") {
        // no <obs> in the <anat...>
        if (s.size() < 5) return std::nullopt;
        if (!alpha_word(s[1]) || s[2] != "in" || s[3] != "the") return std::nullopt;
        for (size_t i = 4; i < s.size(); ++i)
            if (!alpha_word(s[i]) || s[i] == "measuring") return std::nullopt;
        return Fact{join_words(s, 4, s.size()), s[1], Polarity::absent, std::nullopt};
    }

    // [stable] <obs> in the <anat...> [measuring <a> x <b> <unit>]
    size_t i = 0;
    Polarity pol = Polarity::present;
    if (s[0] == "stable") {
        pol = Polarity::stable;
        i = 1;
    }
    if (i + 3 >= s.size()) return std::nullopt;
    const std::string& obs = s[i];
    if (!alpha_word(obs) || s[i + 1] != "in" || s[i + 2] != "the") return std::nullopt;
    size_t j = i + 3;
    while (j < s.size() && s[j] != "measuring" && alpha_word(s[j])) ++j;
    if (j == i + 3) return std::nullopt;  // empty anatomy
    Fact fact{join_words(s, i + 3, j), obs, pol, std::nullopt};
    if (j == s.size()) return fact;
    if (s[j] != "measuring") return std::nullopt;
    if (s.size() != j + 5) return std::nullopt;
    Measurement m;
    if (!parse_positive_number(s[j + 1], m.a)) return std::nullopt;
    if (s[j + 2] != "x") return std::nullopt;
    if (!parse_positive_number(s[j + 3], m.b)) return std::nullopt;
    if (!alpha_word(s[j + 4])) return std::nullopt;
    m.unit = s[j + 4];
    fact.measurement = m;
    return fact;
}

}  // namespace

const std::vector<std::string>& observations() {
    static const std::vector<std::string> kObs = {
        "atelectasis", "collection", "consolidation", "edema",    "effusion",
        "fracture",    "hemorrhage", "hernia",        "lesion",   "mass",
        "nodule",      "opacity",    "stranding",     "thickening"};
    return kObs;
}

const std::vector<std::string>& anatomies(const std::string& region) {
    static const std::vector<std::string> kHead = {"brain",  "cerebellum", "ventricles",
                                                   "skull",  "orbits",     "sinuses"};
    static const std::vector<std::string> kChest = {"right lung", "left lung", "heart",
                                                    "mediastinum", "pleura",   "airways"};
    static const std::vector<std::string> kAbdomen = {
        "liver",   "spleen", "pancreas",         "gallbladder",
        "kidneys", "bowel",  "paraaortic region"};
    static const std::vector<std::string> kSpine = {"cervical spine", "thoracic spine",
                                                    "lumbar spine", "vertebral bodies",
                                                    "paraspinal soft tissues"};
    static const std::vector<std::string> kExtremity = {"femur", "tibia",  "shoulder", "knee",
                                                        "hip",   "ankle",  "elbow",    "wrist"};
    if (region == "head") return kHead;
    if (region == "chest") return kChest;
    if (region == "abdomen") return kAbdomen;
    if (region == "spine") return kSpine;
    if (region == "extremity") return kExtremity;
    throw std::invalid_argument("unknown anatomy region: " + region);
}

const std::vector<std::string>& regions() {
    static const std::vector<std::string> kRegions = {"head", "chest", "abdomen", "spine",
                                                      "extremity"};
    return kRegions;
}

const std::vector<std::string>& units() {
    static const std::vector<std::string> kUnits = {"cm", "mm"};
    return kUnits;
}

Fact midline_shift_fact() {
    return Fact{"midline structures", "shift", Polarity::absent, std::nullopt};
}

std::string render_measurement(const Measurement& m) {
    return format_fixed(m.a, 1) + " x " + format_fixed(m.b, 1) + " " + m.unit;
}

std::string render_impression(const std::vector<Fact>& facts) {
    std::vector<std::string> sentences;
    int n = 0;
    for (const auto& f : facts) {
        if (f.polarity == Polarity::absent) continue;
        std::string s = std::to_string(++n) + ". ";
        if (f.polarity == Polarity::stable) s += "stable ";
        s += f.observation + " in the " + f.anatomy;
        if (f.measurement) s += " measuring " + render_measurement(*f.measurement);
        s += ".";
        sentences.push_back(std::move(s));
    }
    const Fact midline = midline_shift_fact();
    for (const auto& f : facts) {
        if (f.polarity != Polarity::absent) continue;
        if (f.measurement)
            throw std::invalid_argument("render_impression: negated fact carries a measurement");
        if (f == midline)
            sentences.push_back("no shift of normally midline structures.");
        else
            sentences.push_back("no " + f.observation + " in the " + f.anatomy + ".");
    }
    std::string out;
    for (size_t i = 0; i < sentences.size(); ++i) {
        if (i) out.push_back(' ');
        out += sentences[i];
    }
    return out;
}

ParsedImpression parse_impression(const std::string& text) {
    std::vector<std::string> toks = Vocab::tokenize(text);

    // Rejoin decimal points: "6 . 7" came from "6.7".
    std::vector<std::string> merged;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (toks[i] == "." && !merged.empty() && all_digits(merged.back()) &&
            i + 1 < toks.size() && all_digits(toks[i + 1])) {
            merged.back() += "." + toks[i + 1];
            ++i;
        } else {
            merged.push_back(toks[i]);
        }
    }

    // Drop enumeration markers ("1.", "2.", ...). After decimal rejoining the
    // only bare integers left directly before a period are item numbers.
    std::vector<std::string> body;
    for (size_t i = 0; i < merged.size(); ++i) {
        if (all_digits(merged[i]) && i + 1 < merged.size() && merged[i + 1] == ".") {
            ++i;
            continue;
        }
        body.push_back(merged[i]);
    }

    ParsedImpression out;
    std::vector<std::string> sentence;
    auto finish = [&] {
        if (sentence.empty()) return;
        auto fact = match_sentence(sentence);
        if (fact) {
            bool dup = false;
            for (const auto& f : out.facts) dup = dup || f == *fact;
            if (!dup) out.facts.push_back(*fact);
        } else {
            ++out.unparsed_count;
        }
        sentence.clear();
    };
    for (auto& tok : body) {
        if (tok == ".") {
            finish();
        } else {
            sentence.push_back(std::move(tok));
        }
    }
    finish();
    return out;
}

std::string render_finding_sentence(const Fact& fact, size_t variant) {
    const size_t v = variant % 3;
    std::string meas;
    if (fact.measurement) meas = " measuring " + render_measurement(*fact.measurement);
    const std::string& obs = fact.observation;
    const std::string& anat = fact.anatomy;

    if (fact == midline_shift_fact()) {
        if (v == 0) return "the midline structures are normal in position.";
        if (v == 1) return "no shift of the midline structures is seen.";
        return "midline structures remain in normal position.";
    }
    switch (fact.polarity) {
        case Polarity::present:
            if (v == 0) return "there is a " + obs + " in the " + anat + meas + ".";
            if (v == 1) return "a " + obs + " is seen in the " + anat + meas + ".";
            return obs + " identified in the " + anat + meas + ".";
        case Polarity::absent:
            if (v == 0) return "no evidence of " + obs + " in the " + anat + ".";
            if (v == 1) return "the " + anat + " shows no " + obs + ".";
            return "no " + obs + " is identified in the " + anat + ".";
        case Polarity::stable:
            if (v == 0) return "stable " + obs + " in the " + anat + meas + " unchanged from prior.";
            if (v == 1) return "unchanged " + obs + " in the " + anat + meas + ".";
            return "stable " + obs + " in the " + anat + meas + " compared to prior.";
    }
    throw std::invalid_argument("render_finding_sentence: bad polarity");
}

}  // namespace grammar
}  // namespace radsum

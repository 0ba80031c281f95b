#pragma once

#include <compare>
#include <optional>
#include <string>
#include <vector>

namespace radsum {

enum class Polarity { present, absent, stable };

std::string polarity_name(Polarity p);
Polarity polarity_from_name(const std::string& name);

struct Measurement {
    double a = 0.0;
    double b = 0.0;
    std::string unit;  // "cm" or "mm" for generated data

    auto operator<=>(const Measurement&) const = default;
};

// One clinical assertion. Impressions are a pure function of a fact list and
// parse back to it exactly; that round trip is what the fact-level metrics
// lean on.
struct Fact {
    std::string anatomy;
    std::string observation;
    Polarity polarity = Polarity::present;
    std::optional<Measurement> measurement;

    auto operator<=>(const Fact&) const = default;
};

struct ParsedImpression {
    std::vector<Fact> facts;     // in sentence order, duplicates removed
    size_t unparsed_count = 0;   // non-empty sentences that matched no pattern
};

namespace grammar {

// Closed lexicons for the synthetic generator. Every entry avoids the
// tokenizer's split characters (notably 'x') so encode/decode round-trips
// word for word.
const std::vector<std::string>& observations();
const std::vector<std::string>& anatomies(const std::string& region);
const std::vector<std::string>& regions();
const std::vector<std::string>& units();

// The one irregular sentence form, kept verbatim from conventional usage:
// "no shift of normally midline structures."
Fact midline_shift_fact();

std::string render_measurement(const Measurement& m);

// Abnormal facts (present/stable) as numbered items, then negations as
// unnumbered "no ... in the ..." sentences. Lowercase, sentences separated
// by single spaces.
std::string render_impression(const std::vector<Fact>& facts);

// Inverse of render_impression; tolerates arbitrary text by counting
// sentences it cannot match. Word patterns are structural, not checked
// against the lexicons, so foreign but well-formed fact sentences still
// yield facts.
ParsedImpression parse_impression(const std::string& text);

// Findings-side prose for one fact; `variant` cycles phrasing templates.
std::string render_finding_sentence(const Fact& fact, size_t variant);

}  // namespace grammar

}  // namespace radsum

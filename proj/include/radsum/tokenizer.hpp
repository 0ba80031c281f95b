#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace radsum {

/// Word-level vocabulary with reserved special tokens.
///
/// Tokens are whitespace-delimited units further split on the punctuation set
/// `.,:;()x` (each split character becomes its own single-character token, so
/// measurements like "4.7 x 3.2" tokenize stably). Ids are dense in
/// [0, size()); ids 0..5 are reserved.
class Vocab {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kDeid = 4;
    static constexpr int kUnk = 5;
    static constexpr int kReserved = 6;

    static const std::vector<std::string>& reserved_tokens();

    // Splits text into token strings. Pure function, no vocabulary needed.
    static std::vector<std::string> tokenize(std::string_view text);

    // Most frequent tokens kept up to max_size (including the reserved ids);
    // ties broken lexicographically. Throws std::invalid_argument if
    // max_size < 16 or the corpus is empty.
    static Vocab build(const std::vector<std::string>& texts, size_t max_size);

    std::vector<int> encode(std::string_view text) const;

    // Joins tokens with single spaces. Throws std::out_of_range on id >= size.
    std::string decode(const std::vector<int>& ids) const;

    int id_of(std::string_view token) const;  // kUnk if absent
    const std::string& token_of(int id) const;
    bool contains(std::string_view token) const;
    size_t size() const { return id_to_token_.size(); }

    // One token per line, line number = id.
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

  private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;

    void push(const std::string& token);
};

}  // namespace radsum

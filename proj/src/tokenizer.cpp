#include "radsum/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

#include "radsum/util.hpp"

namespace radsum {

namespace {

bool is_split_char(char c) {
    return c == '.' || c == ',' || c == ':' || c == ';' || c == '(' || c == ')' || c == 'x';
}

}  // namespace

const std::vector<std::string>& Vocab::reserved_tokens() {
    static const std::vector<std::string> kTokens = {"<pad>", "<bos>", "<eos>",
                                                     "<sep>", "<deid>", "<unk>"};
    return kTokens;
}

std::vector<std::string> Vocab::tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (const char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_split_char(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

void Vocab::push(const std::string& token) {
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
}

Vocab Vocab::build(const std::vector<std::string>& texts, size_t max_size) {
    if (max_size < 16) {
        throw std::invalid_argument("build_vocab: max_size must be >= 16");
    }
    if (texts.empty()) {
        throw std::invalid_argument("build_vocab: empty corpus");
    }
    std::map<std::string, uint64_t> counts;
    for (const auto& text : texts) {
        for (auto& tok : tokenize(text)) ++counts[tok];
    }

    Vocab v;
    for (const auto& tok : reserved_tokens()) v.push(tok);

    // Sort by frequency desc, lexicographic asc on ties. std::map iteration
    // already gives the lexicographic order, so stable_sort preserves it.
    std::vector<std::pair<std::string, uint64_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [tok, n] : items) {
        if (v.size() >= max_size) break;
        if (v.token_to_id_.count(tok)) continue;  // reserved spellings in the corpus
        v.push(tok);
    }
    return v;
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids;
    for (auto& tok : tokenize(text)) {
        auto it = token_to_id_.find(tok);
        ids.push_back(it == token_to_id_.end() ? kUnk : it->second);
    }
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= static_cast<int>(id_to_token_.size())) {
            throw std::out_of_range("decode: id " + std::to_string(ids[i]) +
                                    " outside vocab of size " + std::to_string(size()));
        }
        if (i) out.push_back(' ');
        out += id_to_token_[static_cast<size_t>(ids[i])];
    }
    return out;
}

int Vocab::id_of(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= static_cast<int>(id_to_token_.size())) {
        throw std::out_of_range("token_of: id " + std::to_string(id));
    }
    return id_to_token_[static_cast<size_t>(id)];
}

bool Vocab::contains(std::string_view token) const {
    return token_to_id_.count(std::string(token)) > 0;
}

void Vocab::save(const std::string& path) const {
    std::string out;
    for (const auto& tok : id_to_token_) {
        out += tok;
        out.push_back('\n');
    }
    write_file(path, out);
}

Vocab Vocab::load(const std::string& path) {
    const std::string content = read_file(path);
    Vocab v;
    for (auto& line : split_lines(content)) {
        if (line.empty()) continue;
        v.push(line);
    }
    const auto& reserved = reserved_tokens();
    if (v.size() < reserved.size()) {
        throw std::runtime_error("vocab file too small: " + path);
    }
    for (size_t i = 0; i < reserved.size(); ++i) {
        if (v.id_to_token_[i] != reserved[i]) {
            throw std::runtime_error("vocab file missing reserved token " + reserved[i] +
                                     " at id " + std::to_string(i) + ": " + path);
        }
    }
    return v;
}

}  // namespace radsum

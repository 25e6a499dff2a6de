#include "incap/vocab.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "incap/error.hpp"

namespace incap::vocab {

const char* const kSpecialNames[kNumSpecials] = {"<start>", "<end>", "<pad>", "<unk>"};

std::vector<std::string> tokenize(const std::string& caption) {
    // First pass: lowercase, keep word characters, keep apostrophes only when
    // flanked by word characters ("dog's" stays, trailing quotes go).
    auto is_word = [](unsigned char c) { return std::isalnum(c) != 0; };
    std::string clean;
    clean.reserve(caption.size());
    for (size_t i = 0; i < caption.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(caption[i]);
        if (is_word(c)) {
            clean.push_back(static_cast<char>(std::tolower(c)));
        } else if (c == '\'' && i > 0 && i + 1 < caption.size() &&
                   is_word(static_cast<unsigned char>(caption[i - 1])) &&
                   is_word(static_cast<unsigned char>(caption[i + 1]))) {
            clean.push_back('\'');
        } else {
            clean.push_back(' ');
        }
    }
    std::vector<std::string> out;
    std::istringstream is(clean);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::set<std::string> build_task_vocab(const std::vector<std::string>& captions, int min_count) {
    if (min_count < 1) throw ContractViolation("build_task_vocab: min_count must be >= 1");
    std::map<std::string, int> freq;
    for (const auto& caption : captions)
        for (const auto& tok : tokenize(caption)) ++freq[tok];
    std::set<std::string> out;
    for (const auto& [tok, n] : freq)
        if (n >= min_count) out.insert(tok);
    return out;
}

Vocabulary::Vocabulary() {
    for (const char* s : kSpecialNames) append(s);
}

void Vocabulary::append(const std::string& token) {
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
}

int Vocabulary::index_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_at(int index) const {
    if (index < 0 || index >= size())
        throw ContractViolation("Vocabulary: index " + std::to_string(index) + " out of range");
    return tokens_[static_cast<size_t>(index)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(index_of(t));
    return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& indices) const {
    std::vector<std::string> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(token_at(i));
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("Vocabulary::save: cannot open " + path);
    os << "#vocab-version " << version_ << "\n";
    for (const auto& t : tokens_) os << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("Vocabulary::load: cannot open " + path);
    std::string header;
    if (!std::getline(is, header) || header.rfind("#vocab-version ", 0) != 0)
        throw ParseError("Vocabulary::load: missing version header in " + path);
    Vocabulary v;
    v.version_ = std::stoi(header.substr(15));
    std::string line;
    int idx = 0;
    while (std::getline(is, line)) {
        if (idx < kNumSpecials) {
            if (line != kSpecialNames[idx])
                throw ParseError("Vocabulary::load: special token mismatch at index " +
                                 std::to_string(idx));
        } else {
            v.append(line);
        }
        ++idx;
    }
    if (idx < kNumSpecials) throw ParseError("Vocabulary::load: truncated file " + path);
    return v;
}

Vocabulary accumulate(const Vocabulary& old, const std::set<std::string>& new_tokens) {
    Vocabulary out = old;
    for (const auto& t : new_tokens)  // std::set iterates lexicographically
        if (!out.contains(t)) out.append(t);
    out.version_ = old.version() + 1;
    return out;
}

} // namespace incap::vocab

#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace incap::vocab {

// Special token indices are fixed forever; everything downstream (decoder
// expansion, checkpoints, pseudo-label caches) depends on them never moving.
constexpr int kStart = 0;
constexpr int kEnd = 1;
constexpr int kPad = 2;
constexpr int kUnk = 3;
constexpr int kNumSpecials = 4;

extern const char* const kSpecialNames[kNumSpecials];  // "<start>", "<end>", "<pad>", "<unk>"

// Lowercase, strip punctuation (apostrophes survive only between word
// characters), split on whitespace. Empty input gives an empty list.
std::vector<std::string> tokenize(const std::string& caption);

// Tokens whose corpus frequency is >= min_count. min_count must be >= 1.
std::set<std::string> build_task_vocab(const std::vector<std::string>& captions, int min_count);

// Ordered token<->index bimap. Grows append-only: once a token has an index,
// no later accumulation may change it.
class Vocabulary {
  public:
    Vocabulary();  // specials only, version 0

    int size() const { return static_cast<int>(tokens_.size()); }
    int version() const { return version_; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool contains(const std::string& token) const { return index_.count(token) > 0; }

    // Unknown tokens map to kUnk.
    int index_of(const std::string& token) const;
    const std::string& token_at(int index) const;

    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    std::vector<std::string> decode(const std::vector<int>& indices) const;

    // One token per line with line position = index (specials first), after a
    // single header line carrying the version. Round-trips bit-exact.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    bool operator==(const Vocabulary& o) const {
        return tokens_ == o.tokens_ && version_ == o.version_;
    }

    friend Vocabulary accumulate(const Vocabulary& old, const std::set<std::string>& new_tokens);

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int version_ = 0;

    void append(const std::string& token);
};

// Union growth: tokens not yet present are appended in lexicographic order,
// existing indices are untouched, version is incremented. The size identity
// |result| = |old| + |new| - |old n new| holds by construction.
Vocabulary accumulate(const Vocabulary& old, const std::set<std::string>& new_tokens);

} // namespace incap::vocab

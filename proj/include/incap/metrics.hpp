#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "incap/dataio.hpp"
#include "incap/model.hpp"
#include "incap/vocab.hpp"

namespace incap::metrics {

struct EvalPair {
    std::vector<std::string> candidate;
    std::vector<std::vector<std::string>> references;  // at least one
};

// All values on the percent-ish table scale: BLEU/ROUGE/METEOR are fractions
// x100, CIDEr is the conventional x10 consensus score x100 (so it can exceed
// 100 on small corpora).
struct MetricReport {
    double bleu1 = 0;
    double bleu4 = 0;
    double meteor_lite = 0;
    double rouge_l = 0;
    double cider = 0;

    bool operator==(const MetricReport&) const = default;
};

// Unscaled corpus scores, the quantities the oracle suite compares at 1e-6.
namespace raw {
// Corpus-level BLEU-n: clipped modified n-gram precisions, geometric mean,
// brevity penalty against the closest reference length (ties to the shorter).
double bleu(const std::vector<EvalPair>& pairs, int n);
// Mean over pairs of max-over-references F_beta(LCS) with beta = 1.2.
double rouge_l(const std::vector<EvalPair>& pairs);
// Mean over pairs of the 1..4-gram TF-IDF cosine consensus, references
// averaged; document frequencies from corpus_refs (one entry per image).
double cider(const std::vector<EvalPair>& pairs,
             const std::vector<std::vector<std::vector<std::string>>>& corpus_refs);
// Unigram matcher (exact first, then suffix-stem), F with recall weighted 9:1,
// fragmentation penalty 0.5*(chunks/matches)^3; max over refs, mean over pairs.
double meteor_lite(const std::vector<EvalPair>& pairs);

int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);
std::string stem(const std::string& token);  // strip ing/ed/es/s, keep stems >= 3 chars
} // namespace raw

double bleu(const std::vector<EvalPair>& pairs, int n);  // n must be 1 or 4
double rouge_l(const std::vector<EvalPair>& pairs);
double cider(const std::vector<EvalPair>& pairs);  // document frequencies from the pairs' own refs
double meteor_lite(const std::vector<EvalPair>& pairs);

// All five metrics over one corpus.
MetricReport score_pairs(const std::vector<EvalPair>& pairs);

using ImageLoader = std::function<const dataio::Image&(int image_id)>;
using RefMap = std::map<int, std::vector<std::string>>;  // image_id -> raw captions

// Greedy-decode every test image of `task`, score against its references.
MetricReport evaluate(const model::ModelStateF& state, const dataio::TaskSpec& task,
                      const vocab::Vocabulary& vocab, const RefMap& refs, const ImageLoader& load,
                      int max_len = 20);

// The caption half of evaluate(), reusable for cached/dumped captions.
MetricReport score_captions(const std::map<int, std::vector<std::string>>& candidates,
                            const RefMap& refs);

} // namespace incap::metrics

#include "incap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include "incap/error.hpp"

namespace incap::metrics {

namespace {

// n-grams as separator-joined strings, counted.
std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
    std::unordered_map<std::string, int> out;
    if (static_cast<int>(tokens.size()) < n) return out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int k = 1; k < n; ++k) {
            key.push_back('\x1f');
            key += tokens[i + static_cast<size_t>(k)];
        }
        ++out[key];
    }
    return out;
}

} // namespace

namespace raw {

double bleu(const std::vector<EvalPair>& pairs, int n) {
    long long cand_len = 0, ref_len = 0;
    std::vector<long long> total(static_cast<size_t>(n), 0), match(static_cast<size_t>(n), 0);
    for (const auto& pair : pairs) {
        cand_len += static_cast<long long>(pair.candidate.size());
        // Closest reference length; ties resolved toward the shorter.
        long long best = -1;
        for (const auto& ref : pair.references) {
            long long len = static_cast<long long>(ref.size());
            if (best < 0 ||
                std::llabs(len - static_cast<long long>(pair.candidate.size())) <
                    std::llabs(best - static_cast<long long>(pair.candidate.size())) ||
                (std::llabs(len - static_cast<long long>(pair.candidate.size())) ==
                     std::llabs(best - static_cast<long long>(pair.candidate.size())) &&
                 len < best))
                best = len;
        }
        ref_len += std::max(best, 0LL);

        for (int k = 1; k <= n; ++k) {
            auto cand = ngram_counts(pair.candidate, k);
            std::unordered_map<std::string, int> cap;  // max count over references
            for (const auto& ref : pair.references)
                for (const auto& [g, c] : ngram_counts(ref, k))
                    cap[g] = std::max(cap[g], c);
            for (const auto& [g, c] : cand) {
                total[static_cast<size_t>(k - 1)] += c;
                auto it = cap.find(g);
                if (it != cap.end())
                    match[static_cast<size_t>(k - 1)] += std::min(c, it->second);
            }
        }
    }
    if (cand_len == 0) return 0.0;
    double log_sum = 0;
    for (int k = 0; k < n; ++k) {
        if (total[static_cast<size_t>(k)] == 0 || match[static_cast<size_t>(k)] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(match[static_cast<size_t>(k)]) /
                            static_cast<double>(total[static_cast<size_t>(k)]));
    }
    double bp = cand_len >= ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return bp * std::exp(log_sum / n);
}

int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const std::vector<EvalPair>& pairs) {
    constexpr double beta = 1.2;
    if (pairs.empty()) return 0.0;
    double sum = 0;
    for (const auto& pair : pairs) {
        double best = 0;
        for (const auto& ref : pair.references) {
            if (pair.candidate.empty() || ref.empty()) continue;
            int lcs = lcs_length(pair.candidate, ref);
            if (lcs == 0) continue;
            double p = static_cast<double>(lcs) / static_cast<double>(pair.candidate.size());
            double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
            double f = (1 + beta * beta) * p * r / (r + beta * beta * p);
            best = std::max(best, f);
        }
        sum += best;
    }
    return sum / static_cast<double>(pairs.size());
}

double cider(const std::vector<EvalPair>& pairs,
             const std::vector<std::vector<std::vector<std::string>>>& corpus_refs) {
    constexpr int kMaxN = 4;
    // Document frequency: in how many images' reference sets each n-gram occurs.
    std::unordered_map<std::string, int> df;
    for (const auto& refs : corpus_refs) {
        std::unordered_map<std::string, int> seen;
        for (const auto& ref : refs)
            for (int n = 1; n <= kMaxN; ++n)
                for (const auto& [g, c] : ngram_counts(ref, n)) seen[g] = 1;
        for (const auto& [g, one] : seen) df[g] += one;
    }
    double log_images = std::log(std::max<size_t>(corpus_refs.size(), 1));

    auto tfidf = [&](const std::vector<std::string>& tokens, int n) {
        std::unordered_map<std::string, double> vec;
        for (const auto& [g, c] : ngram_counts(tokens, n)) {
            auto it = df.find(g);
            double idf = log_images - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
            vec[g] = c * idf;
        }
        return vec;
    };
    auto cosine = [](const std::unordered_map<std::string, double>& a,
                     const std::unordered_map<std::string, double>& b) {
        double dot = 0, na = 0, nb = 0;
        for (const auto& [g, w] : a) {
            na += w * w;
            auto it = b.find(g);
            if (it != b.end()) dot += w * it->second;
        }
        for (const auto& [g, w] : b) nb += w * w;
        if (na == 0 || nb == 0) return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };

    if (pairs.empty()) return 0.0;
    double sum = 0;
    for (const auto& pair : pairs) {
        double pair_score = 0;
        for (int n = 1; n <= kMaxN; ++n) {
            auto cand = tfidf(pair.candidate, n);
            double ref_avg = 0;
            for (const auto& ref : pair.references) ref_avg += cosine(cand, tfidf(ref, n));
            pair_score += ref_avg / static_cast<double>(pair.references.size());
        }
        sum += pair_score / kMaxN;
    }
    return sum / static_cast<double>(pairs.size());
}

std::string stem(const std::string& token) {
    static const char* kSuffixes[] = {"ing", "ed", "es", "s"};
    for (const char* suf : kSuffixes) {
        size_t n = std::strlen(suf);
        if (token.size() >= n + 3 && token.compare(token.size() - n, n, suf) == 0)
            return token.substr(0, token.size() - n);
    }
    return token;
}

namespace {

struct Alignment {
    int matches = 0;
    int chunks = 0;
};

// Two-stage greedy unigram alignment: exact matches first, then stem matches
// on the leftovers, each candidate position pairing with the first unmatched
// reference position. Chunks are runs contiguous in both sentences.
Alignment align(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
    std::vector<int> cand_to_ref(cand.size(), -1);
    std::vector<bool> ref_used(ref.size(), false);
    for (size_t i = 0; i < cand.size(); ++i)
        for (size_t j = 0; j < ref.size(); ++j)
            if (!ref_used[j] && cand[i] == ref[j]) {
                cand_to_ref[i] = static_cast<int>(j);
                ref_used[j] = true;
                break;
            }
    for (size_t i = 0; i < cand.size(); ++i) {
        if (cand_to_ref[i] >= 0) continue;
        std::string cs = stem(cand[i]);
        for (size_t j = 0; j < ref.size(); ++j)
            if (!ref_used[j] && cs == stem(ref[j])) {
                cand_to_ref[i] = static_cast<int>(j);
                ref_used[j] = true;
                break;
            }
    }
    Alignment out;
    int prev_ref = -2;
    for (size_t i = 0; i < cand.size(); ++i) {
        if (cand_to_ref[i] < 0) {
            prev_ref = -2;
            continue;
        }
        ++out.matches;
        if (cand_to_ref[i] != prev_ref + 1) ++out.chunks;
        prev_ref = cand_to_ref[i];
    }
    return out;
}

} // namespace

double meteor_lite(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) return 0.0;
    double sum = 0;
    for (const auto& pair : pairs) {
        double best = 0;
        for (const auto& ref : pair.references) {
            if (pair.candidate.empty() || ref.empty()) continue;
            Alignment a = align(pair.candidate, ref);
            if (a.matches == 0) continue;
            double p = static_cast<double>(a.matches) / static_cast<double>(pair.candidate.size());
            double r = static_cast<double>(a.matches) / static_cast<double>(ref.size());
            double f = 10.0 * p * r / (r + 9.0 * p);
            double frag = static_cast<double>(a.chunks) / static_cast<double>(a.matches);
            best = std::max(best, f * (1.0 - 0.5 * frag * frag * frag));
        }
        sum += best;
    }
    return sum / static_cast<double>(pairs.size());
}

} // namespace raw

double bleu(const std::vector<EvalPair>& pairs, int n) {
    if (n != 1 && n != 4) throw ConfigError("bleu: n must be 1 or 4");
    return 100.0 * raw::bleu(pairs, n);
}

double rouge_l(const std::vector<EvalPair>& pairs) { return 100.0 * raw::rouge_l(pairs); }

double cider(const std::vector<EvalPair>& pairs) {
    std::vector<std::vector<std::vector<std::string>>> corpus_refs;
    corpus_refs.reserve(pairs.size());
    for (const auto& p : pairs) corpus_refs.push_back(p.references);
    // Conventional x10 consensus scaling, then onto the percent-ish table scale.
    return 10.0 * 100.0 * raw::cider(pairs, corpus_refs);
}

double meteor_lite(const std::vector<EvalPair>& pairs) {
    return 100.0 * raw::meteor_lite(pairs);
}

MetricReport score_pairs(const std::vector<EvalPair>& pairs) {
    MetricReport r;
    r.bleu1 = bleu(pairs, 1);
    r.bleu4 = bleu(pairs, 4);
    r.meteor_lite = meteor_lite(pairs);
    r.rouge_l = rouge_l(pairs);
    r.cider = cider(pairs);
    return r;
}

MetricReport score_captions(const std::map<int, std::vector<std::string>>& candidates,
                            const RefMap& refs) {
    std::vector<EvalPair> pairs;
    for (const auto& [image_id, caps] : candidates) {
        auto it = refs.find(image_id);
        if (it == refs.end() || it->second.empty())
            throw ValidationError("score_captions: no references for image " +
                                  std::to_string(image_id));
        EvalPair p;
        p.candidate = caps.empty() ? std::vector<std::string>() : vocab::tokenize(caps.front());
        for (const auto& ref : it->second) p.references.push_back(vocab::tokenize(ref));
        pairs.push_back(std::move(p));
    }
    return score_pairs(pairs);
}

MetricReport evaluate(const model::ModelStateF& state, const dataio::TaskSpec& task,
                      const vocab::Vocabulary& vocab, const RefMap& refs, const ImageLoader& load,
                      int max_len) {
    if (task.test.empty())
        throw ConfigError("evaluate: task " + std::to_string(task.task_id) +
                          " has an empty test split");
    std::vector<EvalPair> pairs;
    pairs.reserve(task.test.size());
    for (int image_id : task.test) {
        auto it = refs.find(image_id);
        if (it == refs.end() || it->second.empty())
            throw ValidationError("evaluate: no references for image " + std::to_string(image_id));
        auto feature = model::encode(state, load(image_id));
        auto indices = model::generate(state, feature, max_len);
        EvalPair p;
        for (int idx : indices)
            if (idx >= vocab::kNumSpecials) p.candidate.push_back(vocab.token_at(idx));
        for (const auto& ref : it->second) p.references.push_back(vocab::tokenize(ref));
        pairs.push_back(std::move(p));
    }
    return score_pairs(pairs);
}

} // namespace incap::metrics

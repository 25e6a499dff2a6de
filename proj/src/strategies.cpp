#include "incap/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "incap/error.hpp"
#include "incap/metrics.hpp"
#include "incap/rng.hpp"

using ordered_json = nlohmann::ordered_json;

namespace incap::strategies {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::F: return "F";
        case Variant::EF: return "E_F";
        case Variant::DF: return "D_F";
        case Variant::P: return "P";
        case Variant::FD: return "FD";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "F") return Variant::F;
    if (name == "E_F" || name == "EF") return Variant::EF;
    if (name == "D_F" || name == "DF") return Variant::DF;
    if (name == "P") return Variant::P;
    if (name == "FD") return Variant::FD;
    throw ConfigError("unknown strategy '" + name + "' (expected F, E_F, D_F, P or FD)");
}

// ---------------------------------------------------------------------------
// Pseudo labels
// ---------------------------------------------------------------------------

std::map<int, std::vector<int>> generate_pseudo_labels(const model::ModelStateF& old_state,
                                                       const std::vector<int>& image_ids,
                                                       const ImageLoader& load, int max_len) {
    std::map<int, std::vector<int>> out;
    for (int id : image_ids) {
        if (out.count(id)) continue;
        auto feature = model::encode(old_state, load(id));
        auto tokens = model::generate(old_state, feature, max_len);
        std::vector<int> framed;
        framed.reserve(tokens.size() + 2);
        framed.push_back(vocab::kStart);
        framed.insert(framed.end(), tokens.begin(), tokens.end());
        framed.push_back(vocab::kEnd);
        out.emplace(id, std::move(framed));
    }
    return out;
}

std::map<int, std::vector<int>> pseudo_labels_cached(const std::string& cache_path,
                                                     const model::ModelStateF& old_state,
                                                     const std::vector<int>& image_ids,
                                                     const ImageLoader& load, int max_len) {
    const uint64_t checksum = model::model_checksum(old_state);
    {
        std::ifstream is(cache_path, std::ios::binary);
        if (is) {
            try {
                ordered_json j;
                is >> j;
                if (j.value("model_checksum", std::string()) == std::to_string(checksum) &&
                    j.value("max_len", -1) == max_len) {
                    std::map<int, std::vector<int>> out;
                    bool complete = true;
                    for (int id : image_ids) {
                        auto it = j["labels"].find(std::to_string(id));
                        if (it == j["labels"].end()) {
                            complete = false;
                            break;
                        }
                        out[id] = it->get<std::vector<int>>();
                    }
                    if (complete) return out;
                }
            } catch (const nlohmann::json::exception&) {
                // unreadable cache falls through to regeneration
            }
        }
    }
    auto labels = generate_pseudo_labels(old_state, image_ids, load, max_len);
    ordered_json j;
    j["model_checksum"] = std::to_string(checksum);
    j["max_len"] = max_len;
    j["labels"] = ordered_json::object();
    for (const auto& [id, seq] : labels) j["labels"][std::to_string(id)] = seq;
    std::ofstream os(cache_path, std::ios::binary);
    if (!os) throw std::runtime_error("pseudo_labels_cached: cannot open " + cache_path);
    os << j.dump(2) << "\n";
    return labels;
}

// ---------------------------------------------------------------------------
// Freezing
// ---------------------------------------------------------------------------

std::map<std::string, FreezeRule> freeze_rules(const model::ModelStateF& st, Variant v) {
    std::map<std::string, FreezeRule> rules;
    for (const auto& [name, t] : st.params) {
        (void)t;
        FreezeRule r;
        bool is_encoder = name.rfind("enc.", 0) == 0;
        switch (v) {
            case Variant::F:
            case Variant::P:
            case Variant::FD:
                break;
            case Variant::EF:
                r.frozen = is_encoder;
                break;
            case Variant::DF:
                if (!is_encoder) {
                    r.frozen = true;
                    if (name == "dec.embed" || name == "dec.out.w" || name == "dec.out.b")
                        r.tail_from = st.expansion_start;
                }
                break;
        }
        rules[name] = r;
    }
    return rules;
}

bool element_trainable(const std::string& name, const FreezeRule& rule, size_t flat,
                       const model::ModelStateF& st) {
    if (!rule.frozen) return true;
    if (rule.tail_from < 0) return false;
    int vocab_index;
    if (name == "dec.embed")
        vocab_index = static_cast<int>(flat) / st.cfg.embed_dim;
    else if (name == "dec.out.w")
        vocab_index = static_cast<int>(flat % static_cast<size_t>(st.vocab_size));
    else if (name == "dec.out.b")
        vocab_index = static_cast<int>(flat);
    else
        return false;
    return vocab_index >= rule.tail_from;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct Adam {
    ParamMap<float> m, v;
    int64_t t = 0;
    double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(const ParamMap<float>& params, double lr_)
        : m(zeros_like(params)), v(zeros_like(params)), lr(lr_) {}

    void step(model::ModelStateF& st, const ParamMap<float>& grads,
              const std::map<std::string, FreezeRule>& rules) {
        ++t;
        float c1 = static_cast<float>(1.0 - std::pow(beta1, static_cast<double>(t)));
        float c2 = static_cast<float>(1.0 - std::pow(beta2, static_cast<double>(t)));
        for (auto& [name, param] : st.params) {
            const FreezeRule& rule = rules.at(name);
            if (rule.frozen && rule.tail_from < 0) continue;
            const auto& g = grads.at(name).v;
            auto& mv = m.at(name).v;
            auto& vv = v.at(name).v;
            for (size_t i = 0; i < param.v.size(); ++i) {
                if (rule.frozen && !element_trainable(name, rule, i, st)) continue;
                mv[i] = static_cast<float>(beta1) * mv[i] + static_cast<float>(1.0 - beta1) * g[i];
                vv[i] =
                    static_cast<float>(beta2) * vv[i] + static_cast<float>(1.0 - beta2) * g[i] * g[i];
                float mhat = mv[i] / c1;
                float vhat = vv[i] / c2;
                param.v[i] -= static_cast<float>(lr) * mhat /
                              (std::sqrt(vhat) + static_cast<float>(eps));
            }
        }
    }
};

double validation_cider(const model::ModelStateF& st, const TrainData& data,
                        const StrategyConfig& cfg) {
    std::vector<metrics::EvalPair> pairs;
    for (int id : data.val_images) {
        auto feature = model::encode(st, data.load_image(id));
        auto indices = model::generate(st, feature, cfg.max_len);
        metrics::EvalPair p;
        for (int idx : indices)
            if (idx >= vocab::kNumSpecials) p.candidate.push_back(data.vocab->token_at(idx));
        for (const auto& ref : data.val_refs.at(id)) p.references.push_back(vocab::tokenize(ref));
        pairs.push_back(std::move(p));
    }
    return metrics::cider(pairs);
}

} // namespace

TrainResult train_task(const model::ModelStateF& state, const TrainData& data,
                       const StrategyConfig& cfg, const model::ModelStateF* teacher) {
    if (cfg.variant == Variant::FD && teacher == nullptr)
        throw ConfigError("train_task: FD requires a teacher model");
    if (cfg.variant == Variant::P)
        for (const auto& [id, target] : data.train_pairs) {
            (void)target;
            if (!data.pseudo_labels.count(id))
                throw ConfigError("train_task: P without cached pseudo labels for image " +
                                  std::to_string(id));
        }
    if (!data.val_images.empty() && data.vocab == nullptr)
        throw ConfigError("train_task: validation set given without a vocabulary");

    TrainResult result;
    if (cfg.variant == Variant::FD) {
        // The student is rebuilt; only the vocabulary state carries over.
        result.state = model::init_model<float>(state.cfg, state.vocab_size, state.vocab_version,
                                                derive_seed(cfg.seed, 0xfd1217));
        if (!cfg.fd_reinit_decoder)
            for (auto& [name, t] : result.state.params)
                if (name.rfind("dec.", 0) == 0) t = state.p(name);
        result.state.expansion_start = state.expansion_start;
    } else {
        result.state = state;
    }

    auto rules = freeze_rules(result.state, cfg.variant);
    for (const auto& [name, rule] : rules)
        result.state.trainable[name] =
            !rule.frozen || (rule.tail_from >= 0 && rule.tail_from < result.state.vocab_size);

    Rng rng(cfg.seed);
    Adam adam(result.state.params, cfg.learning_rate);
    const double beta = cfg.variant == Variant::P ? cfg.beta : 0.0;
    const double lambda = cfg.variant == Variant::FD ? cfg.lambda : 0.0;
    const model::ModelStateF* dist_teacher = cfg.variant == Variant::FD ? teacher : nullptr;

    model::ModelStateF best_state = result.state;
    double best_cider = -1;
    int since_best = 0;
    const bool early_stop = !data.val_images.empty() && cfg.early_stop_patience > 0;

    std::vector<size_t> order(data.train_pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<BatchSample<float>> batch;
            batch.reserve(end - start);
            for (size_t k = start; k < end; ++k) {
                const auto& [id, target] = data.train_pairs[order[k]];
                BatchSample<float> s;
                s.image = &data.load_image(id);
                s.target = target;
                if (cfg.variant == Variant::P) s.pseudo_target = data.pseudo_labels.at(id);
                batch.push_back(std::move(s));
            }
            auto grads = zeros_like(result.state.params);
            auto parts = loss_and_grads(result.state, batch, beta, lambda, dist_teacher, &grads);
            adam.step(result.state, grads, rules);
            epoch_loss += parts.total * static_cast<double>(batch.size());
            seen += batch.size();
        }
        result.epoch_losses.push_back(seen ? epoch_loss / static_cast<double>(seen) : 0.0);
        ++result.epochs_run;

        if (early_stop) {
            double cider = validation_cider(result.state, data, cfg);
            if (cider > best_cider) {
                best_cider = cider;
                best_state = result.state;
                result.best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= cfg.early_stop_patience) {
                break;
            }
        } else {
            result.best_epoch = epoch;
        }
    }
    if (early_stop && best_cider >= 0) result.state = std::move(best_state);
    result.rng_state = rng.state();
    result.state.rng_state = result.rng_state;
    return result;
}

} // namespace incap::strategies

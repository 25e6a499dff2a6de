#pragma once

#include <functional>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "incap/dataio.hpp"
#include "incap/model.hpp"
#include "incap/vocab.hpp"

namespace incap::strategies {

// The five ways of training a new task:
//   F    fine-tuning from the previous model, everything trainable
//   EF   encoder frozen, decoder trainable
//   DF   decoder frozen except the parameters added by vocabulary expansion
//   P    fine-tuning plus a cross-entropy term against cached pseudo labels
//   FD   student rebuilt from scratch, encoder features pulled toward the
//        frozen teacher's by a squared-error penalty
enum class Variant { F, EF, DF, P, FD };

std::string variant_name(Variant v);           // "F", "E_F", "D_F", "P", "FD"
Variant variant_from_name(const std::string&); // throws ConfigError on unknown names

struct StrategyConfig {
    Variant variant = Variant::F;
    double beta = 1.0;    // pseudo-label weight (P only)
    double lambda = 1.0;  // distillation weight (FD only)
    int epochs = 30;
    double learning_rate = 1e-3;
    int batch_size = 4;
    uint64_t seed = 0;
    int early_stop_patience = 0;  // on validation CIDEr; 0 disables
    bool fd_reinit_decoder = false;
    int max_len = 20;  // greedy cap for pseudo labels and validation decoding
};

// One training batch: images plus padded target sequences. Pseudo targets are
// attached only under P.
struct CaptionBatch {
    std::vector<const dataio::Image*> images;
    std::vector<int> image_ids;
    std::vector<std::vector<int>> targets;  // padded with <pad> to max length
    std::vector<int> lengths;
    std::vector<std::vector<int>> pseudo_targets;
    std::vector<int> pseudo_lengths;
};

// ---------------------------------------------------------------------------
// Loss functions
// ---------------------------------------------------------------------------

// -sum_i log p_i(target) over non-pad steps, averaged over the batch.
// pred[b][t] is the step-t distribution of sample b, predicting target[t+1].
template <typename T>
double loss_ce(const std::vector<std::vector<std::vector<T>>>& pred,
               const std::vector<std::vector<int>>& targets) {
    if (pred.size() != targets.size() || pred.empty())
        throw ContractViolation("loss_ce: batch sizes disagree or batch is empty");
    double total = 0;
    for (size_t b = 0; b < pred.size(); ++b) {
        const auto& tgt = targets[b];
        size_t steps = 0;
        for (size_t t = 1; t < tgt.size(); ++t)
            if (tgt[t] != vocab::kPad) ++steps;
        if (pred[b].size() < steps)
            throw ContractViolation("loss_ce: fewer distributions than non-pad steps");
        for (size_t t = 0; t < steps; ++t) {
            double p = static_cast<double>(pred[b][t][static_cast<size_t>(tgt[t + 1])]);
            total -= std::log(std::max(p, 1e-12));
        }
    }
    return total / static_cast<double>(pred.size());
}

// beta-weighted cross-entropy against pseudo targets; the total training
// objective under P is loss_ce + loss_pseudo.
template <typename T>
double loss_pseudo(const std::vector<std::vector<std::vector<T>>>& pred,
                   const std::vector<std::vector<int>>& pseudo_targets, double beta) {
    for (const auto& t : pseudo_targets)
        if (t.empty()) throw ContractViolation("loss_pseudo: empty pseudo target");
    return beta * loss_ce(pred, pseudo_targets);
}

// lambda * ||teacher - student||^2 for one feature pair.
template <typename T>
double loss_distill(const model::Feature<T>& teacher_feat, const model::Feature<T>& student_feat,
                    double lambda) {
    if (teacher_feat.values.size() != student_feat.values.size())
        throw ContractViolation("loss_distill: feature dimensions disagree");
    double acc = 0;
    for (size_t i = 0; i < teacher_feat.values.size(); ++i) {
        double d = static_cast<double>(teacher_feat.values[i]) -
                   static_cast<double>(student_feat.values[i]);
        acc += d * d;
    }
    return lambda * acc;
}

// ---------------------------------------------------------------------------
// Combined loss + gradients (the training core, also used by gradient checks)
// ---------------------------------------------------------------------------

template <typename T>
struct BatchSample {
    const dataio::Image* image = nullptr;
    std::vector<int> target;         // [<start> ... <end>], no padding
    std::vector<int> pseudo_target;  // same framing; empty when unused
};

struct LossParts {
    double total = 0;
    double ce = 0;
    double pseudo = 0;
    double distill = 0;
};

// total = mean_b( ce_b + beta * pseudo_ce_b + lambda * ||f_teacher - f_student||^2 ).
// The pseudo branch runs only when beta != 0 and a pseudo target is present,
// the distill branch only when teacher != nullptr and lambda != 0, so with
// both off the arithmetic is exactly plain fine-tuning's. When grads is
// non-null every parameter's gradient is accumulated into it.
template <typename T>
LossParts loss_and_grads(const model::ModelState<T>& st,
                         const std::vector<BatchSample<T>>& batch, double beta, double lambda,
                         std::type_identity_t<const model::ModelState<T>*> teacher,
                         std::type_identity_t<ParamMap<T>*> grads) {
    if (batch.empty()) throw ContractViolation("loss_and_grads: empty batch");
    LossParts parts;
    const T inv_b = T(1) / static_cast<T>(batch.size());
    for (const auto& sample : batch) {
        auto enc = model::encode_with_trace(st, *sample.image);
        std::vector<T> dfeature(enc.feature.values.size(), T(0));

        auto tr = model::decode_with_trace(st, enc.feature, sample.target);
        double ce = model::trace_nll(tr);
        parts.ce += ce;
        if (grads) model::decoder_backward(st, tr, inv_b, *grads, dfeature);

        if (beta != 0 && !sample.pseudo_target.empty()) {
            auto ptr = model::decode_with_trace(st, enc.feature, sample.pseudo_target);
            parts.pseudo += beta * model::trace_nll(ptr);
            if (grads)
                model::decoder_backward(st, ptr, static_cast<T>(beta) * inv_b, *grads, dfeature);
        }

        if (teacher != nullptr && lambda != 0) {
            auto tf = model::encode(*teacher, *sample.image);
            parts.distill += loss_distill(tf, enc.feature, lambda);
            if (grads) {
                const T two_lambda = static_cast<T>(2.0 * lambda) * inv_b;
                for (size_t i = 0; i < dfeature.size(); ++i)
                    dfeature[i] += two_lambda * (enc.feature.values[i] - tf.values[i]);
            }
        }

        if (grads) model::encoder_backward(st, enc, dfeature, *grads);
    }
    parts.ce /= static_cast<double>(batch.size());
    parts.pseudo /= static_cast<double>(batch.size());
    parts.distill /= static_cast<double>(batch.size());
    parts.total = parts.ce + parts.pseudo + parts.distill;
    return parts;
}

// ---------------------------------------------------------------------------
// Pseudo labels
// ---------------------------------------------------------------------------

using ImageLoader = std::function<const dataio::Image&(int image_id)>;

// Greedy captions of the previous task's model on the given images, framed as
// [<start> ... <end>] so they can be teacher-forced directly.
std::map<int, std::vector<int>> generate_pseudo_labels(const model::ModelStateF& old_state,
                                                       const std::vector<int>& image_ids,
                                                       const ImageLoader& load, int max_len = 20);

// Disk-cached variant keyed by the old model's checksum; a stale cache is
// regenerated, a fresh one is returned byte-identical.
std::map<int, std::vector<int>> pseudo_labels_cached(const std::string& cache_path,
                                                     const model::ModelStateF& old_state,
                                                     const std::vector<int>& image_ids,
                                                     const ImageLoader& load, int max_len = 20);

// ---------------------------------------------------------------------------
// Task training
// ---------------------------------------------------------------------------

struct TrainData {
    ImageLoader load_image;
    std::vector<std::pair<int, std::vector<int>>> train_pairs;  // (image_id, [<start>..<end>])
    std::vector<int> val_images;                                // early-stop set; may be empty
    std::map<int, std::vector<std::string>> val_refs;           // raw captions per val image
    const vocab::Vocabulary* vocab = nullptr;                   // required when val_images set
    std::map<int, std::vector<int>> pseudo_labels;              // required under P
};

struct TrainResult {
    model::ModelStateF state;
    std::vector<double> epoch_losses;  // mean per-sample training loss per epoch
    int best_epoch = -1;               // epoch whose parameters were kept
    int epochs_run = 0;
    std::string rng_state;
};

// Adam over mini-batches with variant-specific freezing. Frozen parameters are
// bit-identical before and after. Under FD the student is re-initialized from
// scratch (decoder too unless cfg.fd_reinit_decoder is false) and the teacher
// is mandatory. Under P every train image must have a pseudo label.
TrainResult train_task(const model::ModelStateF& state, const TrainData& data,
                       const StrategyConfig& cfg, const model::ModelStateF* teacher = nullptr);

// Per-element freezing rule; tail_from >= 0 exempts vocabulary rows/columns
// at indices >= tail_from (the parameters added by expansion).
struct FreezeRule {
    bool frozen = false;
    int tail_from = -1;
};

std::map<std::string, FreezeRule> freeze_rules(const model::ModelStateF& st, Variant v);
bool element_trainable(const std::string& name, const FreezeRule& rule, size_t flat,
                       const model::ModelStateF& st);

} // namespace incap::strategies

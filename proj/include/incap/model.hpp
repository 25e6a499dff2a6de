#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "incap/dataio.hpp"
#include "incap/error.hpp"
#include "incap/rng.hpp"
#include "incap/tensor.hpp"
#include "incap/vocab.hpp"

namespace incap::model {

// Toy-scale captioner: 2 stride-2 conv blocks + global average pool + linear
// encoder, and a single-layer GRU decoder fed the projected image feature as
// its step-0 input (before the start token).
struct ModelConfig {
    int in_channels = 3;
    int image_size = 32;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int feature_dim = 64;
    int embed_dim = 64;
    int hidden_dim = 128;

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Feature {
    std::vector<T> values;
};

template <typename T>
struct ModelState {
    ModelConfig cfg;
    int vocab_version = 0;
    int vocab_size = 0;
    // First vocab row added by the latest expand_decoder; rows below it are
    // the "old" decoder outputs that partial freezing must keep intact.
    int expansion_start = 0;
    ParamMap<T> params;
    std::map<std::string, bool> trainable;
    std::string rng_state;  // trainer RNG snapshot, persisted in checkpoints

    Tensor<T>& p(const std::string& name) { return params.at(name); }
    const Tensor<T>& p(const std::string& name) const { return params.at(name); }
};

using ModelStateF = ModelState<float>;

namespace detail {

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Stable softmax in place.
template <typename T>
void softmax(std::vector<T>& v) {
    T mx = *std::max_element(v.begin(), v.end());
    T sum = 0;
    for (T& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (T& x : v) x /= sum;
}

inline int conv_out(int in) { return (in - 1) / 2 + 1; }  // k=3, stride=2, pad=1

// out[oc,oy,ox] = b[oc] + sum_{ic,ky,kx} w[oc,ic,ky,kx] * in[ic, 2oy+ky-1, 2ox+kx-1]
template <typename T>
void conv2d_forward(const Tensor<T>& w, const Tensor<T>& b, const std::vector<T>& in, int ic,
                    int ih, int iw, std::vector<T>& out, int oc) {
    int oh = conv_out(ih), ow = conv_out(iw);
    out.assign(static_cast<size_t>(oc) * oh * ow, T(0));
    for (int o = 0; o < oc; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T acc = b.v[static_cast<size_t>(o)];
                for (int i = 0; i < ic; ++i)
                    for (int ky = 0; ky < 3; ++ky) {
                        int y = 2 * oy + ky - 1;
                        if (y < 0 || y >= ih) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int x = 2 * ox + kx - 1;
                            if (x < 0 || x >= iw) continue;
                            acc += w.v[static_cast<size_t>(((o * ic + i) * 3 + ky) * 3 + kx)] *
                                   in[static_cast<size_t>((i * ih + y) * iw + x)];
                        }
                    }
                out[static_cast<size_t>((o * oh + oy) * ow + ox)] = acc;
            }
}

template <typename T>
void conv2d_backward(const Tensor<T>& w, const std::vector<T>& in, int ic, int ih, int iw,
                     const std::vector<T>& dout, int oc, Tensor<T>& dw, Tensor<T>& db,
                     std::vector<T>* din) {
    int oh = conv_out(ih), ow = conv_out(iw);
    if (din) din->assign(static_cast<size_t>(ic) * ih * iw, T(0));
    for (int o = 0; o < oc; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T g = dout[static_cast<size_t>((o * oh + oy) * ow + ox)];
                if (g == T(0)) continue;
                db.v[static_cast<size_t>(o)] += g;
                for (int i = 0; i < ic; ++i)
                    for (int ky = 0; ky < 3; ++ky) {
                        int y = 2 * oy + ky - 1;
                        if (y < 0 || y >= ih) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int x = 2 * ox + kx - 1;
                            if (x < 0 || x >= iw) continue;
                            size_t wi = static_cast<size_t>(((o * ic + i) * 3 + ky) * 3 + kx);
                            size_t ii = static_cast<size_t>((i * ih + y) * iw + x);
                            dw.v[wi] += g * in[ii];
                            if (din) (*din)[ii] += g * w.v[wi];
                        }
                    }
            }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

template <typename T>
ModelState<T> init_model(const ModelConfig& cfg, int vocab_size, int vocab_version,
                         uint64_t seed) {
    ModelState<T> st;
    st.cfg = cfg;
    st.vocab_size = vocab_size;
    st.vocab_version = vocab_version;
    st.expansion_start = vocab_size;
    const int C = cfg.in_channels, C1 = cfg.conv1_channels, C2 = cfg.conv2_channels;
    const int F = cfg.feature_dim, E = cfg.embed_dim, H = cfg.hidden_dim, V = vocab_size;

    Rng rng(seed);
    auto weight = [&rng](std::vector<int> shape, int fan_in, double gain = 1.0) {
        Tensor<T> t(std::move(shape));
        double k = gain / std::sqrt(static_cast<double>(fan_in));
        for (auto& x : t.v) x = static_cast<T>(rng.uniform(-k, k));
        return t;
    };
    // Draw order is fixed; do not reorder these lines. The image path (convs,
    // fc, featproj) gets a larger gain so the caption conditions on the image
    // from the first epochs instead of settling into an unconditional
    // language model.
    st.params["enc.conv1.w"] = weight({C1, C, 3, 3}, C * 9, 2.0);
    st.params["enc.conv1.b"] = Tensor<T>({C1});
    st.params["enc.conv2.w"] = weight({C2, C1, 3, 3}, C1 * 9, 2.0);
    st.params["enc.conv2.b"] = Tensor<T>({C2});
    st.params["enc.fc.w"] = weight({C2, F}, C2, 2.0);
    st.params["enc.fc.b"] = Tensor<T>({F});
    st.params["dec.featproj.w"] = weight({F, E}, F, 2.0);
    st.params["dec.featproj.b"] = Tensor<T>({E});
    {
        Tensor<T> embed({V, E});
        for (auto& x : embed.v) x = static_cast<T>(rng.uniform(-0.1, 0.1));
        st.params["dec.embed"] = std::move(embed);
    }
    st.params["dec.gru.wx"] = weight({3 * H, E}, E);
    st.params["dec.gru.wh"] = weight({3 * H, H}, H);
    {
        // Positive update-gate bias so early hidden state (the image feature)
        // survives the length of a caption.
        Tensor<T> bx({3 * H});
        for (int i = H; i < 2 * H; ++i) bx.v[static_cast<size_t>(i)] = T(1);
        st.params["dec.gru.bx"] = std::move(bx);
    }
    st.params["dec.gru.bh"] = Tensor<T>({3 * H});
    st.params["dec.out.w"] = weight({H, V}, H);
    st.params["dec.out.b"] = Tensor<T>({V});

    for (const auto& [name, t] : st.params) {
        (void)t;
        st.trainable[name] = true;
    }
    return st;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

template <typename T>
struct EncoderTrace {
    std::vector<T> input;
    std::vector<T> pre1, act1;
    std::vector<T> pre2, act2;
    std::vector<T> pooled;
    Feature<T> feature;
    int h1 = 0, w1 = 0, h2 = 0, w2 = 0;
};

template <typename T>
EncoderTrace<T> encode_with_trace(const ModelState<T>& st, const dataio::Image& image) {
    const auto& cfg = st.cfg;
    if (image.channels != cfg.in_channels || image.height != cfg.image_size ||
        image.width != cfg.image_size)
        throw ContractViolation("encode: image shape " + std::to_string(image.channels) + "x" +
                                std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " does not match the configured " +
                                std::to_string(cfg.in_channels) + "x" +
                                std::to_string(cfg.image_size) + "x" +
                                std::to_string(cfg.image_size));
    EncoderTrace<T> tr;
    // Zero-centered pixels; canvases arrive in [0, 1].
    tr.input.resize(image.data.size());
    for (size_t i = 0; i < image.data.size(); ++i)
        tr.input[i] = static_cast<T>(image.data[i]) - static_cast<T>(0.5);
    int hw = cfg.image_size;
    tr.h1 = detail::conv_out(hw);
    tr.w1 = tr.h1;
    tr.h2 = detail::conv_out(tr.h1);
    tr.w2 = tr.h2;

    detail::conv2d_forward(st.p("enc.conv1.w"), st.p("enc.conv1.b"), tr.input, cfg.in_channels, hw,
                           hw, tr.pre1, cfg.conv1_channels);
    tr.act1 = tr.pre1;
    for (auto& x : tr.act1) x = std::max(x, T(0));
    detail::conv2d_forward(st.p("enc.conv2.w"), st.p("enc.conv2.b"), tr.act1, cfg.conv1_channels,
                           tr.h1, tr.w1, tr.pre2, cfg.conv2_channels);
    tr.act2 = tr.pre2;
    for (auto& x : tr.act2) x = std::max(x, T(0));

    tr.pooled.assign(static_cast<size_t>(cfg.conv2_channels), T(0));
    T inv = T(1) / static_cast<T>(tr.h2 * tr.w2);
    for (int c = 0; c < cfg.conv2_channels; ++c) {
        T acc = 0;
        for (int i = 0; i < tr.h2 * tr.w2; ++i)
            acc += tr.act2[static_cast<size_t>(c * tr.h2 * tr.w2 + i)];
        tr.pooled[static_cast<size_t>(c)] = acc * inv;
    }

    const auto& fw = st.p("enc.fc.w");
    const auto& fb = st.p("enc.fc.b");
    tr.feature.values.assign(static_cast<size_t>(cfg.feature_dim), T(0));
    for (int f = 0; f < cfg.feature_dim; ++f) {
        T acc = fb.v[static_cast<size_t>(f)];
        for (int c = 0; c < cfg.conv2_channels; ++c)
            acc += fw.v[static_cast<size_t>(c * cfg.feature_dim + f)] * tr.pooled[static_cast<size_t>(c)];
        tr.feature.values[static_cast<size_t>(f)] = acc;
    }
    return tr;
}

template <typename T>
Feature<T> encode(const ModelState<T>& st, const dataio::Image& image) {
    return encode_with_trace(st, image).feature;
}

template <typename T>
void encoder_backward(const ModelState<T>& st, const EncoderTrace<T>& tr,
                      const std::vector<T>& dfeature, ParamMap<T>& grads) {
    const auto& cfg = st.cfg;
    const auto& fw = st.p("enc.fc.w");
    auto& dfw = grads.at("enc.fc.w");
    auto& dfb = grads.at("enc.fc.b");
    std::vector<T> dpooled(static_cast<size_t>(cfg.conv2_channels), T(0));
    for (int f = 0; f < cfg.feature_dim; ++f) {
        T g = dfeature[static_cast<size_t>(f)];
        if (g == T(0)) continue;
        dfb.v[static_cast<size_t>(f)] += g;
        for (int c = 0; c < cfg.conv2_channels; ++c) {
            dfw.v[static_cast<size_t>(c * cfg.feature_dim + f)] += g * tr.pooled[static_cast<size_t>(c)];
            dpooled[static_cast<size_t>(c)] += g * fw.v[static_cast<size_t>(c * cfg.feature_dim + f)];
        }
    }

    T inv = T(1) / static_cast<T>(tr.h2 * tr.w2);
    std::vector<T> dact2(tr.act2.size(), T(0));
    for (int c = 0; c < cfg.conv2_channels; ++c)
        for (int i = 0; i < tr.h2 * tr.w2; ++i)
            dact2[static_cast<size_t>(c * tr.h2 * tr.w2 + i)] = dpooled[static_cast<size_t>(c)] * inv;
    for (size_t i = 0; i < dact2.size(); ++i)
        if (tr.pre2[i] <= T(0)) dact2[i] = T(0);

    std::vector<T> dact1;
    detail::conv2d_backward(st.p("enc.conv2.w"), tr.act1, cfg.conv1_channels, tr.h1, tr.w1, dact2,
                            cfg.conv2_channels, grads.at("enc.conv2.w"), grads.at("enc.conv2.b"),
                            &dact1);
    for (size_t i = 0; i < dact1.size(); ++i)
        if (tr.pre1[i] <= T(0)) dact1[i] = T(0);
    detail::conv2d_backward(st.p("enc.conv1.w"), tr.input, cfg.in_channels, cfg.image_size,
                            cfg.image_size, dact1, cfg.conv1_channels, grads.at("enc.conv1.w"),
                            grads.at("enc.conv1.b"), static_cast<std::vector<T>*>(nullptr));
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

template <typename T>
struct DecodeTrace {
    // Step 0 consumes the projected feature, steps 1..L-1 consume embedded
    // target tokens; logits exist for steps 1..L-1 (predicting target[s]).
    std::vector<std::vector<T>> xs;
    std::vector<std::vector<T>> hs;
    std::vector<std::vector<T>> r, z, n, nh;  // per-step gate traces
    std::vector<std::vector<T>> probs;        // softmax outputs, logit steps only
    std::vector<T> feature;
    std::vector<int> target;
};

namespace detail {

template <typename T>
void gru_step(const ModelState<T>& st, const std::vector<T>& x, const std::vector<T>& hprev,
              std::vector<T>& h, std::vector<T>& r, std::vector<T>& z, std::vector<T>& n,
              std::vector<T>& nh) {
    const int H = st.cfg.hidden_dim;
    const int E = static_cast<int>(x.size());
    const auto& wx = st.p("dec.gru.wx").v;
    const auto& wh = st.p("dec.gru.wh").v;
    const auto& bx = st.p("dec.gru.bx").v;
    const auto& bh = st.p("dec.gru.bh").v;
    std::vector<T> gx(static_cast<size_t>(3 * H)), gh(static_cast<size_t>(3 * H));
    for (int k = 0; k < 3 * H; ++k) {
        T acc = bx[static_cast<size_t>(k)];
        for (int e = 0; e < E; ++e) acc += wx[static_cast<size_t>(k * E + e)] * x[static_cast<size_t>(e)];
        gx[static_cast<size_t>(k)] = acc;
        acc = bh[static_cast<size_t>(k)];
        for (int i = 0; i < H; ++i) acc += wh[static_cast<size_t>(k * H + i)] * hprev[static_cast<size_t>(i)];
        gh[static_cast<size_t>(k)] = acc;
    }
    r.resize(static_cast<size_t>(H));
    z.resize(static_cast<size_t>(H));
    n.resize(static_cast<size_t>(H));
    nh.resize(static_cast<size_t>(H));
    h.resize(static_cast<size_t>(H));
    for (int i = 0; i < H; ++i) {
        r[static_cast<size_t>(i)] = sigmoid(gx[static_cast<size_t>(i)] + gh[static_cast<size_t>(i)]);
        z[static_cast<size_t>(i)] = sigmoid(gx[static_cast<size_t>(H + i)] + gh[static_cast<size_t>(H + i)]);
        nh[static_cast<size_t>(i)] = gh[static_cast<size_t>(2 * H + i)];
        n[static_cast<size_t>(i)] =
            std::tanh(gx[static_cast<size_t>(2 * H + i)] + r[static_cast<size_t>(i)] * nh[static_cast<size_t>(i)]);
        h[static_cast<size_t>(i)] = (T(1) - z[static_cast<size_t>(i)]) * n[static_cast<size_t>(i)] +
                                    z[static_cast<size_t>(i)] * hprev[static_cast<size_t>(i)];
    }
}

template <typename T>
std::vector<T> output_logits(const ModelState<T>& st, const std::vector<T>& h) {
    const int H = st.cfg.hidden_dim, V = st.vocab_size;
    const auto& w = st.p("dec.out.w").v;
    const auto& b = st.p("dec.out.b").v;
    std::vector<T> logits(b.begin(), b.end());
    for (int j = 0; j < V; ++j) {
        T acc = logits[static_cast<size_t>(j)];
        for (int i = 0; i < H; ++i) acc += w[static_cast<size_t>(i * V + j)] * h[static_cast<size_t>(i)];
        logits[static_cast<size_t>(j)] = acc;
    }
    return logits;
}

template <typename T>
std::vector<T> featproj(const ModelState<T>& st, const std::vector<T>& feature) {
    const int F = st.cfg.feature_dim, E = st.cfg.embed_dim;
    const auto& w = st.p("dec.featproj.w").v;
    const auto& b = st.p("dec.featproj.b").v;
    std::vector<T> x(b.begin(), b.end());
    for (int e = 0; e < E; ++e) {
        T acc = x[static_cast<size_t>(e)];
        for (int f = 0; f < F; ++f) acc += w[static_cast<size_t>(f * E + e)] * feature[static_cast<size_t>(f)];
        x[static_cast<size_t>(e)] = acc;
    }
    return x;
}

template <typename T>
void check_target(const ModelState<T>& st, const std::vector<int>& target) {
    if (target.size() < 2 || target.front() != vocab::kStart || target.back() != vocab::kEnd)
        throw ContractViolation("decode: target must begin with <start> and end with <end>");
    for (int t : target) {
        if (t < 0 || t >= st.vocab_size)
            throw ContractViolation("decode: token index " + std::to_string(t) +
                                    " >= vocab size " + std::to_string(st.vocab_size));
        if (t == vocab::kPad) throw ContractViolation("decode: <pad> inside target");
    }
}

} // namespace detail

template <typename T>
DecodeTrace<T> decode_with_trace(const ModelState<T>& st, const Feature<T>& feature,
                                 const std::vector<int>& target) {
    detail::check_target(st, target);
    const int E = st.cfg.embed_dim;
    const size_t L = target.size();
    DecodeTrace<T> tr;
    tr.feature = feature.values;
    tr.target = target;
    tr.xs.resize(L);
    tr.hs.resize(L);
    tr.r.resize(L);
    tr.z.resize(L);
    tr.n.resize(L);
    tr.nh.resize(L);
    tr.probs.reserve(L - 1);

    const auto& embed = st.p("dec.embed").v;
    std::vector<T> hprev(static_cast<size_t>(st.cfg.hidden_dim), T(0));
    for (size_t s = 0; s < L; ++s) {
        if (s == 0) {
            tr.xs[s] = detail::featproj(st, tr.feature);
        } else {
            int tok = target[s - 1];
            tr.xs[s].assign(embed.begin() + static_cast<long>(tok) * E,
                            embed.begin() + static_cast<long>(tok + 1) * E);
        }
        detail::gru_step(st, tr.xs[s], hprev, tr.hs[s], tr.r[s], tr.z[s], tr.n[s], tr.nh[s]);
        hprev = tr.hs[s];
        if (s >= 1) {
            auto logits = detail::output_logits(st, tr.hs[s]);
            detail::softmax(logits);
            tr.probs.push_back(std::move(logits));
        }
    }
    return tr;
}

// Teacher-forced per-step distributions; entry t predicts target[t+1].
template <typename T>
std::vector<std::vector<T>> decode_train(const ModelState<T>& st, const Feature<T>& feature,
                                         const std::vector<int>& target) {
    return decode_with_trace(st, feature, target).probs;
}

// Cross-entropy of the trace against its own target: sum of -log p over steps.
template <typename T>
double trace_nll(const DecodeTrace<T>& tr) {
    double loss = 0;
    for (size_t t = 0; t < tr.probs.size(); ++t) {
        double p = static_cast<double>(tr.probs[t][static_cast<size_t>(tr.target[t + 1])]);
        loss -= std::log(std::max(p, 1e-12));
    }
    return loss;
}

// Backpropagate scale * d(nll)/d(params) through the trace, accumulating into
// grads and dfeature.
template <typename T>
void decoder_backward(const ModelState<T>& st, const DecodeTrace<T>& tr, T scale,
                      ParamMap<T>& grads, std::vector<T>& dfeature) {
    const int H = st.cfg.hidden_dim, V = st.vocab_size, E = st.cfg.embed_dim,
              F = st.cfg.feature_dim;
    const size_t L = tr.target.size();
    const auto& wx = st.p("dec.gru.wx").v;
    const auto& wh = st.p("dec.gru.wh").v;
    const auto& ow = st.p("dec.out.w").v;
    auto& dwx = grads.at("dec.gru.wx").v;
    auto& dwh = grads.at("dec.gru.wh").v;
    auto& dbx = grads.at("dec.gru.bx").v;
    auto& dbh = grads.at("dec.gru.bh").v;
    auto& dow = grads.at("dec.out.w").v;
    auto& dob = grads.at("dec.out.b").v;
    auto& dembed = grads.at("dec.embed").v;

    std::vector<T> dh_next(static_cast<size_t>(H), T(0));
    std::vector<T> dh(static_cast<size_t>(H)), dlogits(static_cast<size_t>(V));
    std::vector<T> dgx(static_cast<size_t>(3 * H)), dgh(static_cast<size_t>(3 * H));
    for (size_t s = L; s-- > 0;) {
        dh = dh_next;
        if (s >= 1) {
            const auto& p = tr.probs[s - 1];
            int y = tr.target[s];
            for (int j = 0; j < V; ++j)
                dlogits[static_cast<size_t>(j)] =
                    scale * (p[static_cast<size_t>(j)] - (j == y ? T(1) : T(0)));
            const auto& h = tr.hs[s];
            for (int j = 0; j < V; ++j) dob[static_cast<size_t>(j)] += dlogits[static_cast<size_t>(j)];
            for (int i = 0; i < H; ++i) {
                T hi = h[static_cast<size_t>(i)];
                T acc = 0;
                for (int j = 0; j < V; ++j) {
                    dow[static_cast<size_t>(i * V + j)] += hi * dlogits[static_cast<size_t>(j)];
                    acc += ow[static_cast<size_t>(i * V + j)] * dlogits[static_cast<size_t>(j)];
                }
                dh[static_cast<size_t>(i)] += acc;
            }
        }

        const std::vector<T>* hprev_ptr;
        static const std::vector<T> kNoH;
        std::vector<T> zero_h;
        if (s == 0) {
            zero_h.assign(static_cast<size_t>(H), T(0));
            hprev_ptr = &zero_h;
        } else {
            hprev_ptr = &tr.hs[s - 1];
        }
        const auto& hprev = *hprev_ptr;
        (void)kNoH;

        // GRU cell backward.
        const auto& r = tr.r[s];
        const auto& z = tr.z[s];
        const auto& n = tr.n[s];
        const auto& nh = tr.nh[s];
        std::fill(dgx.begin(), dgx.end(), T(0));
        std::fill(dgh.begin(), dgh.end(), T(0));
        std::vector<T> dhprev(static_cast<size_t>(H), T(0));
        for (int i = 0; i < H; ++i) {
            T g = dh[static_cast<size_t>(i)];
            T zi = z[static_cast<size_t>(i)], ni = n[static_cast<size_t>(i)], ri = r[static_cast<size_t>(i)];
            T dn = g * (T(1) - zi);
            T dz = g * (hprev[static_cast<size_t>(i)] - ni);
            dhprev[static_cast<size_t>(i)] += g * zi;
            T dan = dn * (T(1) - ni * ni);
            dgx[static_cast<size_t>(2 * H + i)] += dan;
            dgh[static_cast<size_t>(2 * H + i)] += dan * ri;
            T dr = dan * nh[static_cast<size_t>(i)];
            T dar = dr * ri * (T(1) - ri);
            dgx[static_cast<size_t>(i)] += dar;
            dgh[static_cast<size_t>(i)] += dar;
            T daz = dz * zi * (T(1) - zi);
            dgx[static_cast<size_t>(H + i)] += daz;
            dgh[static_cast<size_t>(H + i)] += daz;
        }
        const auto& x = tr.xs[s];
        const int xe = static_cast<int>(x.size());
        std::vector<T> dx(static_cast<size_t>(xe), T(0));
        for (int k = 0; k < 3 * H; ++k) {
            T gx = dgx[static_cast<size_t>(k)];
            if (gx != T(0)) {
                dbx[static_cast<size_t>(k)] += gx;
                for (int e = 0; e < xe; ++e) {
                    dwx[static_cast<size_t>(k * xe + e)] += gx * x[static_cast<size_t>(e)];
                    dx[static_cast<size_t>(e)] += gx * wx[static_cast<size_t>(k * xe + e)];
                }
            }
            T gh = dgh[static_cast<size_t>(k)];
            if (gh != T(0)) {
                dbh[static_cast<size_t>(k)] += gh;
                for (int i = 0; i < H; ++i) {
                    dwh[static_cast<size_t>(k * H + i)] += gh * hprev[static_cast<size_t>(i)];
                    dhprev[static_cast<size_t>(i)] += gh * wh[static_cast<size_t>(k * H + i)];
                }
            }
        }
        dh_next = dhprev;

        if (s == 0) {
            const auto& fw = st.p("dec.featproj.w").v;
            auto& dfw = grads.at("dec.featproj.w").v;
            auto& dfb = grads.at("dec.featproj.b").v;
            for (int e = 0; e < E; ++e) dfb[static_cast<size_t>(e)] += dx[static_cast<size_t>(e)];
            for (int f = 0; f < F; ++f) {
                T ff = tr.feature[static_cast<size_t>(f)];
                T acc = 0;
                for (int e = 0; e < E; ++e) {
                    dfw[static_cast<size_t>(f * E + e)] += ff * dx[static_cast<size_t>(e)];
                    acc += fw[static_cast<size_t>(f * E + e)] * dx[static_cast<size_t>(e)];
                }
                dfeature[static_cast<size_t>(f)] += acc;
            }
        } else {
            int tok = tr.target[s - 1];
            for (int e = 0; e < E; ++e)
                dembed[static_cast<size_t>(tok * E + e)] += dx[static_cast<size_t>(e)];
        }
    }
}

// Pre-softmax scores over the vocabulary after consuming the projected
// feature and then `prefix` (which must begin with <start>).
template <typename T>
std::vector<T> next_token_scores(const ModelState<T>& st, const Feature<T>& feature,
                                 const std::vector<int>& prefix) {
    if (prefix.empty() || prefix.front() != vocab::kStart)
        throw ContractViolation("next_token_scores: prefix must begin with <start>");
    const int E = st.cfg.embed_dim, H = st.cfg.hidden_dim;
    const auto& embed = st.p("dec.embed").v;
    std::vector<T> h(static_cast<size_t>(H), T(0)), r, z, n, nh, hnew;
    std::vector<T> x = detail::featproj(st, feature.values);
    detail::gru_step(st, x, h, hnew, r, z, n, nh);
    h = hnew;
    for (int tok : prefix) {
        if (tok < 0 || tok >= st.vocab_size)
            throw ContractViolation("next_token_scores: token index out of range");
        x.assign(embed.begin() + static_cast<long>(tok) * E,
                 embed.begin() + static_cast<long>(tok + 1) * E);
        detail::gru_step(st, x, h, hnew, r, z, n, nh);
        h = hnew;
    }
    return detail::output_logits(st, h);
}

// Greedy decoding. <pad> and <start> are never emitted; generation stops at
// <end> (excluded from the output) or after max_len tokens.
template <typename T>
std::vector<int> generate(const ModelState<T>& st, const Feature<T>& feature, int max_len) {
    if (max_len < 1) throw ContractViolation("generate: max_len must be >= 1");
    const int E = st.cfg.embed_dim, H = st.cfg.hidden_dim;
    const auto& embed = st.p("dec.embed").v;
    std::vector<T> h(static_cast<size_t>(H), T(0)), r, z, n, nh, hnew;
    std::vector<T> x = detail::featproj(st, feature.values);
    detail::gru_step(st, x, h, hnew, r, z, n, nh);
    h = hnew;

    std::vector<int> out;
    int cur = vocab::kStart;
    while (static_cast<int>(out.size()) < max_len) {
        x.assign(embed.begin() + static_cast<long>(cur) * E,
                 embed.begin() + static_cast<long>(cur + 1) * E);
        detail::gru_step(st, x, h, hnew, r, z, n, nh);
        h = hnew;
        auto logits = detail::output_logits(st, h);
        int best = -1;
        for (int j = 0; j < st.vocab_size; ++j) {
            if (j == vocab::kPad || j == vocab::kStart) continue;
            if (best < 0 || logits[static_cast<size_t>(j)] > logits[static_cast<size_t>(best)]) best = j;
        }
        if (best == vocab::kEnd) break;
        out.push_back(best);
        cur = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary-driven expansion
// ---------------------------------------------------------------------------

// Copies old embedding rows and old output columns bit-exact; new rows and
// columns are drawn from uniform(-0.1, 0.1) seeded by `seed`. The
// trainability mask of existing parameters is untouched.
template <typename T>
ModelState<T> expand_decoder(const ModelState<T>& st, const vocab::Vocabulary& new_vocab,
                             uint64_t seed) {
    if (new_vocab.version() != st.vocab_version + 1)
        throw ContractViolation("expand_decoder: vocab version " +
                                std::to_string(new_vocab.version()) + " != state version " +
                                std::to_string(st.vocab_version) + " + 1");
    const int old_v = st.vocab_size, new_v = new_vocab.size();
    if (new_v < old_v) throw ContractViolation("expand_decoder: vocabulary shrank");

    ModelState<T> out = st;
    out.vocab_version = new_vocab.version();
    out.vocab_size = new_v;
    out.expansion_start = old_v;
    if (new_v == old_v) return out;

    const int E = st.cfg.embed_dim, H = st.cfg.hidden_dim;
    Rng rng(seed);

    Tensor<T> embed({new_v, E});
    const auto& old_embed = st.p("dec.embed").v;
    std::copy(old_embed.begin(), old_embed.end(), embed.v.begin());
    for (int j = old_v; j < new_v; ++j)
        for (int e = 0; e < E; ++e)
            embed.v[static_cast<size_t>(j * E + e)] = static_cast<T>(rng.uniform(-0.1, 0.1));

    Tensor<T> ow({H, new_v});
    const auto& old_ow = st.p("dec.out.w").v;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < old_v; ++j)
            ow.v[static_cast<size_t>(i * new_v + j)] = old_ow[static_cast<size_t>(i * old_v + j)];
    for (int j = old_v; j < new_v; ++j)
        for (int i = 0; i < H; ++i)
            ow.v[static_cast<size_t>(i * new_v + j)] = static_cast<T>(rng.uniform(-0.1, 0.1));

    Tensor<T> ob({new_v});
    const auto& old_ob = st.p("dec.out.b").v;
    std::copy(old_ob.begin(), old_ob.end(), ob.v.begin());
    for (int j = old_v; j < new_v; ++j)
        ob.v[static_cast<size_t>(j)] = static_cast<T>(rng.uniform(-0.1, 0.1));

    out.params["dec.embed"] = std::move(embed);
    out.params["dec.out.w"] = std::move(ow);
    out.params["dec.out.b"] = std::move(ob);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints (float only)
// ---------------------------------------------------------------------------

void save_checkpoint(const ModelStateF& st, const std::string& path);
ModelStateF load_checkpoint(const std::string& path);
// Errors when the checkpoint's vocab_version/size do not match `v`.
ModelStateF load_checkpoint(const std::string& path, const vocab::Vocabulary& v);

// Content hash of parameters + vocab version; keys pseudo-label caches.
uint64_t model_checksum(const ModelStateF& st);

} // namespace incap::model

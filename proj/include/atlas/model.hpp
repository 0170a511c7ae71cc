#pragma once

// Decoder-only transformer forward pass (GPT-2 family: learned absolute
// positions, pre-LN blocks, tanh-GELU MLP) with two attention surfaces:
//   - read: capture the post-softmax attention row of the last token for
//     every layer/head (AttentionTrace),
//   - write: per-layer scaling hooks that multiply selected entries of that
//     row by lambda AFTER softmax, without renormalization.
//
// f32 storage and arithmetic throughout; softmax and layer-norm statistics
// accumulate in double. Single-threaded per invocation; weights are
// immutable and shared across concurrent contexts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atlas/common.hpp"
#include "atlas/config.hpp"
#include "atlas/weights.hpp"

namespace atlas {

inline constexpr std::size_t npos = static_cast<std::size_t>(-1);

struct ScalingHookSpec {
    std::size_t layer = 0;
    std::vector<std::size_t> target_indices;  // prompt positions, within [0, T)
    float lambda_scale = 1.0f;                // in (0, 1]
    bool apply_during_generation = true;
};

struct HookSet {
    std::vector<ScalingHookSpec> hooks;
    bool renormalize_row = false;  // sensitivity switch; default is the literal scaling

    bool empty() const { return hooks.empty(); }
};

// Attention from the last prompt token to every prompt position, for all
// layers and heads. scores[l][h][j], j < prompt_length.
struct AttentionTrace {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t prompt_length = 0;
    std::vector<float> scores;

    float at(std::size_t layer, std::size_t head, std::size_t pos) const {
        return scores[(layer * n_heads + head) * prompt_length + pos];
    }
    float& at(std::size_t layer, std::size_t head, std::size_t pos) {
        return scores[(layer * n_heads + head) * prompt_length + pos];
    }
};

enum class LogitsMode { all_rows, last_row };

struct ForwardOptions {
    HookSet hooks;
    bool capture_attention = false;
    LogitsMode logits_mode = LogitsMode::all_rows;
    // Query row where the intervention anchors (the "last prompt token").
    // Hooks with apply_during_generation scale every row >= anchor; others
    // scale exactly the anchor row. npos resolves to the last input row.
    std::size_t hook_anchor = npos;
};

struct ForwardResult {
    std::vector<float> logits;  // row-major [rows, vocab]
    std::size_t rows = 0;
    std::size_t vocab = 0;
    std::optional<AttentionTrace> trace;

    const float* row(std::size_t r) const { return logits.data() + r * vocab; }
};

struct GreedyDecodeResult {
    std::vector<std::int32_t> tokens;
    bool truncated = false;  // context filled up before max_new_tokens
};

namespace detail {

inline void linear(const float* x, std::size_t rows, std::size_t in, std::size_t out,
                   const float* w, const float* b, float* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        float* yr = y + r * out;
        if (b) {
            std::copy(b, b + out, yr);
        } else {
            std::fill(yr, yr + out, 0.0f);
        }
        const float* xr = x + r * in;
        for (std::size_t i = 0; i < in; ++i) {
            const float xi = xr[i];
            const float* wr = w + i * out;
            for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wr[o];
        }
    }
}

inline void layer_norm_row(const float* x, std::size_t d, const float* gain, const float* bias,
                           float eps, float* y) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double dx = x[i] - mean;
        var += dx * dx;
    }
    var /= static_cast<double>(d);
    const float m = static_cast<float>(mean);
    const float inv = 1.0f / std::sqrt(static_cast<float>(var) + eps);
    for (std::size_t i = 0; i < d; ++i) y[i] = (x[i] - m) * inv * gain[i] + bias[i];
}

inline float gelu(float x) {
    const float c = 0.7978845608028654f;  // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(c * (x + 0.044715f * x * x * x)));
}

// In-place softmax over the first n entries, max-subtracted.
inline void softmax_row(float* s, std::size_t n) {
    float mx = s[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, s[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const float e = std::exp(s[i] - mx);
        s[i] = e;
        sum += e;
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (std::size_t i = 0; i < n; ++i) s[i] *= inv;
}

inline std::size_t argmax(const float* v, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

} // namespace detail

// Per-layer key/value rows for positions [0, len). Reused across appends;
// truncating `len` rewinds without reallocation.
struct KVCache {
    std::vector<std::vector<float>> k, v;  // [layer][pos * d_model]
    std::size_t len = 0;

    void init(std::size_t n_layers, std::size_t capacity, std::size_t d) {
        k.assign(n_layers, std::vector<float>(capacity * d));
        v.assign(n_layers, std::vector<float>(capacity * d));
        len = 0;
    }
};

class Model {
public:
    Model(ModelConfig config, ModelWeights weights)
        : cfg_(config), w_(std::move(weights)) {
        cfg_.validate();
    }

    const ModelConfig& config() const { return cfg_; }
    const ModelWeights& weights() const { return w_; }

    ForwardResult forward(std::span<const std::int32_t> ids, const ForwardOptions& opt = {}) const {
        validate_input(ids, 0);
        const std::size_t anchor = opt.hook_anchor == npos ? ids.size() - 1 : opt.hook_anchor;
        validate_hooks(opt.hooks, anchor + 1);

        KVCache cache;
        cache.init(cfg_.n_layers, ids.size(), cfg_.d_model);

        ForwardResult out;
        out.vocab = cfg_.vocab_size;
        out.rows = opt.logits_mode == LogitsMode::all_rows ? ids.size() : 1;
        out.logits.resize(out.rows * cfg_.vocab_size);
        if (opt.capture_attention) {
            out.trace = make_trace(ids.size());
        }
        run_block(cache, ids, 0, opt.hooks, anchor, out.logits.data(), opt.logits_mode,
                  out.trace ? &*out.trace : nullptr, ids.size() - 1);
        return out;
    }

    // Softmax of the last-position logits; sums to 1 within 1e-6.
    std::vector<double> next_token_distribution(std::span<const std::int32_t> ids,
                                                const HookSet& hooks = {}) const {
        ForwardOptions opt;
        opt.hooks = hooks;
        opt.logits_mode = LogitsMode::last_row;
        const ForwardResult r = forward(ids, opt);
        return softmax_distribution(std::span<const float>(r.row(0), cfg_.vocab_size));
    }

    GreedyDecodeResult decode_greedy(std::span<const std::int32_t> prompt, const HookSet& hooks,
                                     std::size_t max_new_tokens) const {
        validate_input(prompt, 0);
        const std::size_t anchor = prompt.size() - 1;
        validate_hooks(hooks, prompt.size());

        GreedyDecodeResult res;
        if (max_new_tokens == 0) return res;

        KVCache cache;
        cache.init(cfg_.n_layers, std::min(prompt.size() + max_new_tokens, cfg_.max_context),
                   cfg_.d_model);

        std::vector<float> logits(cfg_.vocab_size);
        run_block(cache, prompt, 0, hooks, anchor, logits.data(), LogitsMode::last_row, nullptr, 0);

        std::int32_t next = static_cast<std::int32_t>(detail::argmax(logits.data(), cfg_.vocab_size));
        res.tokens.push_back(next);

        while (res.tokens.size() < max_new_tokens) {
            if (cache.len + 1 > cfg_.max_context) {
                res.truncated = true;
                break;
            }
            const std::int32_t step[1] = {next};
            run_block(cache, step, cache.len, hooks, anchor, logits.data(), LogitsMode::last_row,
                      nullptr, 0);
            next = static_cast<std::int32_t>(detail::argmax(logits.data(), cfg_.vocab_size));
            res.tokens.push_back(next);
        }
        if (!res.truncated && cache.len + 1 > cfg_.max_context && res.tokens.size() < max_new_tokens) {
            res.truncated = true;
        }
        return res;
    }

    std::vector<double> softmax_distribution(std::span<const float> logits) const {
        std::vector<double> p(logits.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (float v : logits) mx = std::max(mx, static_cast<double>(v));
        double sum = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = std::exp(static_cast<double>(logits[i]) - mx);
            sum += p[i];
        }
        for (auto& v : p) v /= sum;
        return p;
    }

    // Appends `ids` rows at absolute positions [pos_offset, pos_offset+n) on
    // top of `cache`, writing next-token logits and (optionally) the
    // attention row of absolute position `trace_row`.
    void run_block(KVCache& cache, std::span<const std::int32_t> ids, std::size_t pos_offset,
                   const HookSet& hooks, std::size_t hook_anchor, float* logits_out,
                   LogitsMode logits_mode, AttentionTrace* trace_out,
                   std::size_t trace_row) const {
        const std::size_t n = ids.size();
        const std::size_t d = cfg_.d_model;
        const std::size_t H = cfg_.n_heads;
        const std::size_t hd = cfg_.head_dim();
        const std::size_t total = pos_offset + n;
        require(total <= cfg_.max_context, "forward: context overflow (" + std::to_string(total) +
                                               " > " + std::to_string(cfg_.max_context) + ")");
        require(cache.len == pos_offset, "forward: cache length does not match position offset");

        const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd));

        // residual stream for the appended rows
        std::vector<float> x(n * d);
        for (std::size_t r = 0; r < n; ++r) {
            const std::int32_t t = ids[r];
            require(t >= 0 && static_cast<std::size_t>(t) < cfg_.vocab_size,
                    "forward: token id " + std::to_string(t) + " out of range");
            const float* te = w_.token_embedding.data() + static_cast<std::size_t>(t) * d;
            const float* pe = w_.positional_embedding.data() + (pos_offset + r) * d;
            for (std::size_t i = 0; i < d; ++i) x[r * d + i] = te[i] + pe[i];
        }

        std::vector<float> normed(n * d), q(n * d), krows(n * d), vrows(n * d);
        std::vector<float> attn_out(n * d), proj(n * d), scores(total);
        std::vector<float> mlp_hidden(n * w_.mlp_inner);

        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            const LayerWeights& L = w_.layers[l];
            for (std::size_t r = 0; r < n; ++r) {
                detail::layer_norm_row(x.data() + r * d, d, L.ln1_gain.data(), L.ln1_bias.data(),
                                       cfg_.layernorm_epsilon, normed.data() + r * d);
            }
            detail::linear(normed.data(), n, d, d, L.wq.data(), L.bq.data(), q.data());
            detail::linear(normed.data(), n, d, d, L.wk.data(), L.bk.data(), krows.data());
            detail::linear(normed.data(), n, d, d, L.wv.data(), L.bv.data(), vrows.data());

            float* kc = cache.k[l].data();
            float* vc = cache.v[l].data();
            std::copy(krows.begin(), krows.end(), kc + pos_offset * d);
            std::copy(vrows.begin(), vrows.end(), vc + pos_offset * d);

            const ScalingHookSpec* hook = nullptr;
            for (const auto& hk : hooks.hooks) {
                if (hk.layer == l) hook = &hk;
            }

            for (std::size_t r = 0; r < n; ++r) {
                const std::size_t qpos = pos_offset + r;
                const std::size_t ctx = qpos + 1;  // causal: keys [0, qpos]
                float* out_row = attn_out.data() + r * d;
                const bool hook_row =
                    hook != nullptr && (hook->apply_during_generation ? qpos >= hook_anchor
                                                                      : qpos == hook_anchor);
                for (std::size_t h = 0; h < H; ++h) {
                    const float* qh = q.data() + r * d + h * hd;
                    for (std::size_t j = 0; j < ctx; ++j) {
                        const float* kh = kc + j * d + h * hd;
                        float dot = 0.0f;
                        for (std::size_t i = 0; i < hd; ++i) dot += qh[i] * kh[i];
                        scores[j] = dot * inv_sqrt_hd;
                    }
                    detail::softmax_row(scores.data(), ctx);

                    if (hook_row) {
                        for (std::size_t t : hook->target_indices) {
                            if (t < ctx) scores[t] *= hook->lambda_scale;
                        }
                        if (hooks.renormalize_row) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < ctx; ++j) s += scores[j];
                            const float inv = static_cast<float>(1.0 / s);
                            for (std::size_t j = 0; j < ctx; ++j) scores[j] *= inv;
                        }
                    }

                    if (trace_out != nullptr && qpos == trace_row) {
                        for (std::size_t j = 0; j < ctx; ++j) trace_out->at(l, h, j) = scores[j];
                    }

                    float* oh = out_row + h * hd;
                    std::fill(oh, oh + hd, 0.0f);
                    for (std::size_t j = 0; j < ctx; ++j) {
                        const float a = scores[j];
                        const float* vh = vc + j * d + h * hd;
                        for (std::size_t i = 0; i < hd; ++i) oh[i] += a * vh[i];
                    }
                }
            }

            detail::linear(attn_out.data(), n, d, d, L.wo.data(), L.bo.data(), proj.data());
            for (std::size_t i = 0; i < n * d; ++i) x[i] += proj[i];

            for (std::size_t r = 0; r < n; ++r) {
                detail::layer_norm_row(x.data() + r * d, d, L.ln2_gain.data(), L.ln2_bias.data(),
                                       cfg_.layernorm_epsilon, normed.data() + r * d);
            }
            detail::linear(normed.data(), n, d, w_.mlp_inner, L.w_fc.data(), L.b_fc.data(),
                           mlp_hidden.data());
            for (auto& v : mlp_hidden) v = detail::gelu(v);
            detail::linear(mlp_hidden.data(), n, w_.mlp_inner, d, L.w_proj.data(), L.b_proj.data(),
                           proj.data());
            for (std::size_t i = 0; i < n * d; ++i) x[i] += proj[i];
        }

        cache.len = total;

        if (logits_out == nullptr) return;
        const std::size_t first = logits_mode == LogitsMode::all_rows ? 0 : n - 1;
        for (std::size_t r = first; r < n; ++r) {
            detail::layer_norm_row(x.data() + r * d, d, w_.lnf_gain.data(), w_.lnf_bias.data(),
                                   cfg_.layernorm_epsilon, normed.data() + r * d);
            const float* xf = normed.data() + r * d;
            float* lr = logits_out + (r - first) * cfg_.vocab_size;
            for (std::size_t v = 0; v < cfg_.vocab_size; ++v) {
                const float* u = w_.unembedding.data() + v * d;
                float dot = 0.0f;
                for (std::size_t i = 0; i < d; ++i) dot += xf[i] * u[i];
                lr[v] = dot;
            }
        }
    }

    AttentionTrace make_trace(std::size_t prompt_length) const {
        AttentionTrace t;
        t.n_layers = cfg_.n_layers;
        t.n_heads = cfg_.n_heads;
        t.prompt_length = prompt_length;
        t.scores.assign(cfg_.n_layers * cfg_.n_heads * prompt_length, 0.0f);
        return t;
    }

    void validate_input(std::span<const std::int32_t> ids, std::size_t extra) const {
        require(!ids.empty(), "forward: empty token sequence");
        require(ids.size() + extra <= cfg_.max_context,
                "forward: context overflow (" + std::to_string(ids.size() + extra) + " > " +
                    std::to_string(cfg_.max_context) + ")");
    }

    void validate_hooks(const HookSet& hooks, std::size_t prompt_length) const {
        for (const auto& h : hooks.hooks) {
            require(h.layer < cfg_.n_layers, "hook: layer index out of range");
            require(h.lambda_scale > 0.0f && h.lambda_scale <= 1.0f,
                    "hook: lambda must be in (0, 1]");
            for (std::size_t t : h.target_indices) {
                require(t < prompt_length, "hook: target index beyond prompt length");
            }
        }
        for (std::size_t a = 0; a < hooks.hooks.size(); ++a) {
            for (std::size_t b = a + 1; b < hooks.hooks.size(); ++b) {
                require(hooks.hooks[a].layer != hooks.hooks[b].layer,
                        "hook: duplicate hooks on one layer");
            }
        }
    }

private:
    ModelConfig cfg_;
    ModelWeights w_;
};

// Repeated last-token evaluations of one prompt under varying hook sets.
// Positions [0, T-1) are computed once and shared across evaluations (the
// intervention only touches the last query row, so the prefix never
// changes); each evaluate() is one inference pass and is counted.
class PromptSession {
public:
    PromptSession(const Model& model, std::vector<std::int32_t> prompt_ids)
        : model_(model), ids_(std::move(prompt_ids)) {
        require(!ids_.empty(), "PromptSession: empty prompt");
        model_.validate_input(ids_, 0);
    }

    struct Eval {
        std::vector<float> last_logits;
        std::optional<AttentionTrace> trace;
    };

    Eval evaluate(const HookSet& hooks, bool capture_attention) {
        const std::size_t T = ids_.size();
        model_.validate_hooks(hooks, T);
        ++calls_;
        if (!prefix_ready_) {
            cache_.init(model_.config().n_layers, T, model_.config().d_model);
            if (T > 1) {
                std::span<const std::int32_t> prefix(ids_.data(), T - 1);
                model_.run_block(cache_, prefix, 0, HookSet{}, T - 1, nullptr,
                                 LogitsMode::last_row, nullptr, 0);
            }
            prefix_ready_ = true;
        }
        cache_.len = T - 1;  // rewind; the last row is recomputed per hook set

        Eval e;
        e.last_logits.resize(model_.config().vocab_size);
        if (capture_attention) e.trace = model_.make_trace(T);
        const std::int32_t last[1] = {ids_[T - 1]};
        model_.run_block(cache_, last, T - 1, hooks, T - 1, e.last_logits.data(),
                         LogitsMode::last_row, e.trace ? &*e.trace : nullptr, T - 1);
        return e;
    }

    std::vector<double> distribution(const HookSet& hooks) {
        const Eval e = evaluate(hooks, false);
        return model_.softmax_distribution(e.last_logits);
    }

    const std::vector<std::int32_t>& prompt_ids() const { return ids_; }
    std::size_t prompt_length() const { return ids_.size(); }
    std::uint64_t inference_calls() const { return calls_; }
    const Model& model() const { return model_; }

private:
    const Model& model_;
    std::vector<std::int32_t> ids_;
    KVCache cache_;
    bool prefix_ready_ = false;
    std::uint64_t calls_ = 0;
};

} // namespace atlas

#pragma once

// GPT-2-family weight loading.
//
// Tensor name map (shapes in [rows, cols], row-major, x @ W convention):
//   wte.weight                 [vocab, d]       token embedding
//   wpe.weight                 [max_context, d] learned positions
//   h.{i}.ln_1.weight/.bias    [d]
//   h.{i}.attn.c_attn.weight   [d, 3d]  (+ .bias [3d])   fused Q|K|V
//   h.{i}.attn.c_proj.weight   [d, d]   (+ .bias [d])
//   h.{i}.ln_2.weight/.bias    [d]
//   h.{i}.mlp.c_fc.weight      [d, m]   (+ .bias [m])    m read from the tensor
//   h.{i}.mlp.c_proj.weight    [m, d]   (+ .bias [d])
//   ln_f.weight/.bias          [d]
//   lm_head.weight             [vocab, d]  optional; tied to wte when absent

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "atlas/common.hpp"
#include "atlas/config.hpp"
#include "atlas/container.hpp"

namespace atlas {

struct LayerWeights {
    std::vector<float> ln1_gain, ln1_bias;
    std::vector<float> wq, wk, wv;      // each [d, d]
    std::vector<float> bq, bk, bv;      // each [d]
    std::vector<float> wo, bo;          // [d, d], [d]
    std::vector<float> ln2_gain, ln2_bias;
    std::vector<float> w_fc, b_fc;      // [d, m], [m]
    std::vector<float> w_proj, b_proj;  // [m, d], [d]
};

struct ModelWeights {
    std::vector<float> token_embedding;       // [vocab, d]
    std::vector<float> positional_embedding;  // [max_context, d]
    std::vector<LayerWeights> layers;
    std::vector<float> lnf_gain, lnf_bias;
    std::vector<float> unembedding;           // [vocab, d], row per vocab id
    std::size_t mlp_inner = 0;
};

namespace detail {

inline const TensorEntry& want_tensor(const TensorMap& t, const std::string& name) {
    auto it = t.find(name);
    if (it == t.end()) fail("load_model: missing tensor '" + name + "'");
    return it->second;
}

inline void want_shape(const TensorEntry& t, const std::string& name,
                       std::initializer_list<std::size_t> expect) {
    auto mismatch = [&] {
        auto fmt = [](const auto& v) {
            std::string s = "[";
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i) s += ", ";
                s += std::to_string(*(v.begin() + i));
            }
            return s + "]";
        };
        fail("load_model: tensor '" + name + "' shape mismatch: expected " +
             fmt(expect) + ", found " + fmt(t.shape));
    };
    if (t.shape.size() != expect.size()) mismatch();
    std::size_t i = 0;
    for (auto e : expect) {
        if (t.shape[i++] != e) mismatch();
    }
}

inline void want_finite(const TensorEntry& t, const std::string& name) {
    for (float v : t.data) {
        if (!std::isfinite(v)) fail("load_model: tensor '" + name + "' contains non-finite values");
    }
}

inline std::vector<float> take(const TensorMap& tm, const std::string& name,
                               std::initializer_list<std::size_t> shape) {
    const TensorEntry& t = want_tensor(tm, name);
    want_shape(t, name, shape);
    want_finite(t, name);
    return t.data;
}

// Split fused c_attn [d, 3d] into three [d, d] column blocks.
inline void split_qkv(const std::vector<float>& fused, std::size_t d,
                      std::vector<float>& q, std::vector<float>& k, std::vector<float>& v) {
    q.resize(d * d);
    k.resize(d * d);
    v.resize(d * d);
    for (std::size_t r = 0; r < d; ++r) {
        const float* row = fused.data() + r * 3 * d;
        std::copy(row, row + d, q.data() + r * d);
        std::copy(row + d, row + 2 * d, k.data() + r * d);
        std::copy(row + 2 * d, row + 3 * d, v.data() + r * d);
    }
}

} // namespace detail

inline ModelWeights load_model(const std::string& weights_file, const ModelConfig& config) {
    config.validate();
    const TensorMap tm = read_container(weights_file);

    const std::size_t d = config.d_model;
    const std::size_t vocab = config.vocab_size;

    ModelWeights w;
    w.token_embedding = detail::take(tm, "wte.weight", {vocab, d});
    w.positional_embedding = detail::take(tm, "wpe.weight", {config.max_context, d});

    // Inner MLP width comes from layer 0; all layers must agree.
    {
        const TensorEntry& fc0 = detail::want_tensor(tm, "h.0.mlp.c_fc.weight");
        require(fc0.shape.size() == 2 && fc0.shape[0] == d && fc0.shape[1] >= 1,
                "load_model: tensor 'h.0.mlp.c_fc.weight' shape mismatch: expected [" +
                    std::to_string(d) + ", m]");
        w.mlp_inner = fc0.shape[1];
    }
    const std::size_t m = w.mlp_inner;

    w.layers.resize(config.n_layers);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        const std::string p = "h." + std::to_string(i) + ".";
        LayerWeights& L = w.layers[i];
        L.ln1_gain = detail::take(tm, p + "ln_1.weight", {d});
        L.ln1_bias = detail::take(tm, p + "ln_1.bias", {d});

        const auto fused_w = detail::take(tm, p + "attn.c_attn.weight", {d, 3 * d});
        const auto fused_b = detail::take(tm, p + "attn.c_attn.bias", {3 * d});
        detail::split_qkv(fused_w, d, L.wq, L.wk, L.wv);
        L.bq.assign(fused_b.begin(), fused_b.begin() + d);
        L.bk.assign(fused_b.begin() + d, fused_b.begin() + 2 * d);
        L.bv.assign(fused_b.begin() + 2 * d, fused_b.end());

        L.wo = detail::take(tm, p + "attn.c_proj.weight", {d, d});
        L.bo = detail::take(tm, p + "attn.c_proj.bias", {d});
        L.ln2_gain = detail::take(tm, p + "ln_2.weight", {d});
        L.ln2_bias = detail::take(tm, p + "ln_2.bias", {d});
        L.w_fc = detail::take(tm, p + "mlp.c_fc.weight", {d, m});
        L.b_fc = detail::take(tm, p + "mlp.c_fc.bias", {m});
        L.w_proj = detail::take(tm, p + "mlp.c_proj.weight", {m, d});
        L.b_proj = detail::take(tm, p + "mlp.c_proj.bias", {d});
    }

    w.lnf_gain = detail::take(tm, "ln_f.weight", {d});
    w.lnf_bias = detail::take(tm, "ln_f.bias", {d});

    if (tm.count("lm_head.weight")) {
        w.unembedding = detail::take(tm, "lm_head.weight", {vocab, d});
    } else {
        w.unembedding = w.token_embedding;  // weight tying
    }
    return w;
}

} // namespace atlas

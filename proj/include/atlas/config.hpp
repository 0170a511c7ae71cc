#pragma once

#include <cstddef>
#include <string>

#include "atlas/common.hpp"

namespace atlas {

// Architecture description for a decoder-only GPT-2-family checkpoint.
// The weight container carries tensors only; the config is supplied by the
// caller (CLI flag or fixture) and every tensor is shape-checked against it.
struct ModelConfig {
    std::size_t n_layers = 0;     // L
    std::size_t n_heads = 0;      // H
    std::size_t d_model = 0;      // d
    std::size_t vocab_size = 0;   // |V|
    std::size_t max_context = 0;
    float layernorm_epsilon = 1e-5f;

    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        require(n_layers >= 1, "ModelConfig: n_layers must be >= 1");
        require(n_heads >= 1, "ModelConfig: n_heads must be >= 1");
        require(d_model >= 1, "ModelConfig: d_model must be >= 1");
        require(vocab_size >= 1, "ModelConfig: vocab_size must be >= 1");
        require(max_context >= 1, "ModelConfig: max_context must be >= 1");
        require(d_model % n_heads == 0,
                "ModelConfig: d_model (" + std::to_string(d_model) +
                    ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
        require(layernorm_epsilon > 0.0f, "ModelConfig: layernorm_epsilon must be > 0");
    }
};

} // namespace atlas

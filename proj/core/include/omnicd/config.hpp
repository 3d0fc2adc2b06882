#pragma once

#include <array>
#include <string>
#include <vector>

namespace omnicd {

/// All architectural knobs in one place. Desk-scale defaults; the published
/// configuration (input 512, embed 256) is expressible through the same fields.
struct ModelConfig {
    int input_size = 128;   // square input, divisible by 8 and patch_size
    int patch_size = 16;
    int embed_dim = 64;
    int encoder_depth = 4;
    int encoder_heads = 4;
    int global_attention_every = 2;  // every k-th encoder layer attends globally
    int window_size = 4;             // windowed-attention grid side
    std::vector<std::string> text_vocab;  // empty -> default template lexicon
    int text_max_len = 32;
    int text_depth = 2;
    int text_heads = 4;
    int decoder_layers = 2;
    int decoder_heads = 8;
    int decoder_mlp_dim = 2048;
    int cross_attn_dim = 0;  // 0 -> embed_dim / 2
    std::vector<int> psp_bins = {1, 2, 3, 6};
    std::array<double, 3> lambdas = {0.1, 0.1, 0.1};
    double dropout = 0.1;

    int grid_side() const { return input_size / 8; }
    int patch_grid() const { return input_size / patch_size; }
    int cross_dim() const { return cross_attn_dim > 0 ? cross_attn_dim : embed_dim / 2; }

    /// Throws DataError when an invariant is violated.
    void validate() const;

    std::vector<std::string> vocab_or_default() const;
    static std::vector<std::string> default_vocab();

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

}  // namespace omnicd

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "omnicd/config.hpp"
#include "omnicd/nn.hpp"
#include "omnicd/types.hpp"

namespace omnicd {

/// Fixed-vocabulary tokenizer: lowercase, split on whitespace and punctuation
/// (punctuation marks become their own tokens). Ids 0=pad, 1=unknown.
class Tokenizer {
  public:
    Tokenizer() = default;
    explicit Tokenizer(const std::vector<std::string>& vocab);
    std::vector<int> tokenize(const std::string& text, int max_len) const;
    int id_of(const std::string& word) const;  // 1 when unknown
    int vocab_size() const { return static_cast<int>(vocab_.size()) + 2; }

  private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
};

/// ViT-style patch encoder: windowed attention with evenly spaced global
/// layers, a learned 2x transposed convolution, then the 1x1 -> 3x3 neck with
/// layer normalization after each convolution.
struct ImageEncoder {
    struct Block {
        LayerNorm ln1, ln2;
        MultiheadAttention attn;
        Mlp mlp;
        bool global = false;
    };
    Conv2d patch;        // k = stride = patch_size
    Tensor pos;          // fixed sinusoidal, [gh*gw, D]
    std::vector<Block> blocks;
    ConvT2x2 up;
    Conv2d neck1, neck2;
    LayerNorm neck_ln1, neck_ln2;
    ModelConfig cfg;

    ImageEncoder() = default;
    ImageEncoder(const ModelConfig& cfg, Rng& rng);
    /// image: [3,S,S] with pixels in [0,1]. Throws ShapeError / NumericError.
    ImageEmbedding encode(const Var& image) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

/// Bidirectional self-attention stack over word + learned positional
/// embeddings; mean-pools token features and projects to embed_dim.
struct TextEncoder {
    struct Block {
        MultiheadAttention attn;
        Mlp mlp;
        LayerNorm ln1, ln2;
    };
    Var word_emb;   // [V, D]
    Var pos_emb;    // [max_len, D]
    std::vector<Block> blocks;
    Linear pool_proj;   // pooled feature -> embed_dim
    Linear token_proj;  // per-token feature -> embed_dim
    Var output_token;   // [1, D]
    Tokenizer tok;
    ModelConfig cfg;

    TextEncoder() = default;
    TextEncoder(const ModelConfig& cfg, Rng& rng);
    /// Returns prompt tokens (output token first) and the pooled embedding [1,D].
    std::pair<PromptTokens, Var> encode(const std::string& text) const;
    /// Per-token encoded features before pooling, [L,D].
    Var encode_tokens(const std::vector<int>& ids) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

/// Prompt tokens for the dense (confidence-map) path: just the output token.
PromptTokens output_token_only(const TextEncoder& enc);

}  // namespace omnicd

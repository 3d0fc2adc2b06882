#pragma once

#include "omnicd/config.hpp"
#include "omnicd/nn.hpp"
#include "omnicd/types.hpp"

namespace omnicd {

/// Prompt tokens + flattened image tokens moving through the decoder stack.
struct DecoderState {
    Var tokens;      // [T, D]
    Var image;       // [N, D], N = (S/8)^2
    int layer_index = 0;
};

/// Two-layer transformer mask decoder: token self-attention, token->image
/// cross-attention, token MLP, image->token cross-attention, then an
/// upsampling head whose output token selects the mask channel.
struct GuideDecoder {
    struct Layer {
        LayerNorm ln_self, ln_t2i, ln_mlp, ln_i2t;
        MultiheadAttention self_attn;   // full width
        MultiheadAttention t2i;         // halved channels
        Mlp mlp;                        // wide inner, few tokens
        MultiheadAttention i2t;         // halved channels
    };
    std::vector<Layer> layers;
    LayerNorm ln_final;
    MultiheadAttention final_attn;  // token queries over image tokens
    ConvT2x2 up1, up2;              // D -> D/4 -> D/8
    LayerNorm up_ln1, up_ln2;
    Linear mlp1, mlp2, mlp3;        // 3-layer output-token MLP, D -> D -> D/8
    Tensor img_pos;                 // sinusoidal, [(S/8)^2, D]; tests may zero it
    ModelConfig cfg;

    GuideDecoder() = default;
    GuideDecoder(const ModelConfig& cfg, Rng& rng);

    /// One four-step decoder layer. Dropout active only when training.
    DecoderState decoder_layer(const DecoderState& state, bool training = false,
                               Rng* drop_rng = nullptr) const;

    /// Full-resolution mask logits [1,S,S] from a final decoder state.
    Var mask_head(const DecoderState& state) const;

    /// Per-image logits for one temporal embedding.
    Var mask_logits(const PromptTokens& prompt, const ImageEmbedding& emb, bool training = false,
                    Rng* drop_rng = nullptr) const;

    /// Pixel-wise max of the two sigmoid maps.
    ROIAttentionMap generate_roi(const PromptTokens& prompt, const ImageEmbedding& emb1,
                                 const ImageEmbedding& emb2, bool training = false,
                                 Rng* drop_rng = nullptr) const;

    void params(NamedParams& out, const std::string& prefix) const;
};

}  // namespace omnicd

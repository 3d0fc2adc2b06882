#pragma once

#include "omnicd/autograd.hpp"

namespace omnicd {

/// d-channel feature grid at 1/8 input resolution.
struct ImageEmbedding {
    Var data;  // [embed_dim, S/8, S/8]
    int source_size = 0;
};

/// Prompt token matrix; the learnable output token is always row 0.
struct PromptTokens {
    Var tokens;  // [T, embed_dim]
    bool has_output_token = true;
    int token_count() const { return tokens ? tokens->v.dim(0) : 0; }
};

/// Soft [0,1] map at input resolution produced by the guider.
struct ROIAttentionMap {
    Var data;  // [S,S] stored as [1,S,S]
};

/// Spatially pooled imaging-condition vector; (mean | pre-softplus scale)
/// halves when driving AdaIN.
struct StyleVector {
    Var data;  // [embed_dim]
};

/// Same object as ImageEmbedding, role-tagged as content.
struct ContentFeature {
    Var data;  // [embed_dim, S/8, S/8]
};

}  // namespace omnicd

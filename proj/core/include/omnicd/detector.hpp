#pragma once

#include "omnicd/config.hpp"
#include "omnicd/nn.hpp"
#include "omnicd/types.hpp"

namespace omnicd {

/// |emb1 - emb2|, elementwise. Symmetric, nonnegative, zero iff equal.
Var change_features(const ImageEmbedding& emb1, const ImageEmbedding& emb2);

/// Class-agnostic change head: pyramid pooling over the change feature map,
/// fusion, a convolutional head to 1-channel logits, ROI filtering.
struct Detector {
    std::vector<Conv2d> branches;  // 1x1 per pyramid bin
    Conv2d fuse;                   // 3x3, 2*D -> D
    Conv2d head;                   // 3x3, D -> D
    Conv2d out;                    // 1x1, D -> 1
    ModelConfig cfg;

    Detector() = default;
    Detector(const ModelConfig& cfg, Rng& rng);

    /// PSP stage: spatial size preserved, channel count back to embed_dim.
    Var psp_forward(const Var& feat) const;

    /// Returns (raw_prob, filtered_prob), both [1,S,S] in [0,1].
    std::pair<Var, Var> detect(const Var& feat, const ROIAttentionMap& roi) const;

    void params(NamedParams& out, const std::string& prefix) const;
};

}  // namespace omnicd

#pragma once

#include <array>

#include "omnicd/config.hpp"
#include "omnicd/nn.hpp"
#include "omnicd/types.hpp"

namespace omnicd {

/// Per-channel spatial mean and standard deviation of a [C,H,W] grid.
std::pair<Var, Var> channel_stats(const Var& x);

/// AdaIN with effective (positive) style scales: per channel,
/// out = sigma * (x - mean(x)) / max(std(x), eps) + mu.
/// Constant channels collapse to mu; a warning is logged when that happens.
Var adain(const Var& content, const Var& mu, const Var& sigma, double eps = 1e-5);

/// Split a raw style vector into (mu, softplus(scale)) halves.
std::pair<Var, Var> style_params(const StyleVector& s);

/// Siamese convolutional branch pooling an image down to a single style vector.
struct StyleEncoder {
    Conv2d c1, c2, c3;
    Linear fc;
    std::array<int, 3> kernels{7, 3, 3};
    int embed_dim = 0;

    StyleEncoder() = default;
    StyleEncoder(int embed_dim, int input_size, Rng& rng, std::array<int, 3> kernels = {7, 3, 3});
    /// image: [3,S,S] -> StyleVector [embed_dim].
    StyleVector encode(const Var& image) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

/// Three cascaded x2 blocks (upsample, concat content skip, fuse, AdaIN, ReLU)
/// bridging 1/8 resolution to the input size, then a 3-channel sigmoid output.
struct ReconDecoder {
    struct Block {
        Conv2d skip;       // 1x1 content projection
        Conv2d fuse;
        Linear style_proj; // style vector -> (mu | pre-softplus sigma)
        int out_ch = 0;
    };
    Conv2d stem;  // 1x1 content -> first block width
    std::array<Block, 3> blocks;
    Conv2d out_conv;
    ModelConfig cfg;

    ReconDecoder() = default;
    ReconDecoder(const ModelConfig& cfg, Rng& rng);
    /// content [D,S/8,S/8] + style [D] -> image [3,S,S] in [0,1].
    Var reconstruct(const ContentFeature& content, const StyleVector& style) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

}  // namespace omnicd

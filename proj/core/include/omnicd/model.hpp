#pragma once

#include <optional>
#include <string>

#include "omnicd/config.hpp"
#include "omnicd/detector.hpp"
#include "omnicd/encoders.hpp"
#include "omnicd/guide.hpp"
#include "omnicd/prompting.hpp"
#include "omnicd/style.hpp"
#include "omnicd/types.hpp"

namespace omnicd {

/// Everything one forward pass over a bi-temporal pair produces.
struct ModelOutputs {
    ROIAttentionMap roi;
    Var raw_prob;       // [1,S,S]
    Var filtered_prob;  // [1,S,S]
    ContentFeature content1, content2;
    StyleVector style1, style2;
    Var recon1, recon2;  // [3,S,S]
};

/// The full network: shared image encoder, text encoder, prompt-conditioned
/// mask decoder, change detector, style branch with reconstruction decoder.
struct Model {
    ModelConfig cfg;
    ImageEncoder image_enc;
    TextEncoder text_enc;
    GuideDecoder guide;
    Detector detector;
    StyleEncoder style_enc;  // shared across the two epochs
    ReconDecoder recon_dec;
    DensePromptProj dense_proj;

    Model(const ModelConfig& cfg, std::uint64_t seed);

    /// Text-prompted pass. img1/img2: [3,S,S] in [0,1].
    ModelOutputs forward(const Tensor& img1, const Tensor& img2, const std::string& prompt,
                         bool training = false, Rng* drop_rng = nullptr) const;

    /// Reference-prompted pass: the confidence map conditions the decoder by an
    /// additive projection onto both image embeddings.
    ModelOutputs forward(const Tensor& img1, const Tensor& img2, const ConfidenceMap& conf,
                         bool training = false, Rng* drop_rng = nullptr) const;

    NamedParams named_params() const;

  private:
    ModelOutputs forward_impl(const Tensor& img1, const Tensor& img2, const PromptTokens& prompt,
                              const ConfidenceMap* conf, bool training, Rng* drop_rng) const;
};

}  // namespace omnicd

#pragma once

#include <opencv2/core.hpp>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "omnicd/encoders.hpp"
#include "omnicd/nn.hpp"
#include "omnicd/types.hpp"

namespace omnicd {

/// A single class, a class set, or an ordered (from, to) transition.
using ChangeSpec =
    std::variant<std::string, std::vector<std::string>, std::pair<std::string, std::string>>;

/// Template fill, byte-stable: "Identify changes in {...} in the image."
/// Class sets join with " and " in registry order; pairs render "{a} to {b}".
/// Unknown classes raise DataError.
std::string render_prompt(const ChangeSpec& spec, const std::vector<std::string>& registry);

/// Reference image plus mask defining a visual concept.
struct ReferencePrompt {
    Tensor image;  // [3,S,S]
    Tensor mask;   // [S,S] in {0,1}, at least one positive pixel
};

/// [S/8,S/8] map in [0,1] locating the reference concept in a test image.
struct ConfidenceMap {
    Tensor data;
};

/// Foreground embedding cells of the reference act as descriptors; each votes
/// a min-max normalized cosine map over the test embedding; votes aggregate by
/// mean (or max when aggregate_max is set).
ConfidenceMap reference_confidence(const ReferencePrompt& ref, const Tensor& test_image,
                                   const ImageEncoder& encoder, bool aggregate_max = false);

/// Learned 1x1 projection of a confidence map to an additive embedding term.
struct DensePromptProj {
    Conv2d proj;  // 1 -> embed_dim
    DensePromptProj() = default;
    DensePromptProj(int embed_dim, Rng& rng);
    /// conf [S/8,S/8] -> [embed_dim, S/8, S/8]
    Var fwd(const Tensor& conf) const;
    void params(NamedParams& out, const std::string& prefix) const;
};

}  // namespace omnicd

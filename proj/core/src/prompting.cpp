#include "omnicd/prompting.hpp"

#include <algorithm>
#include <cmath>

#include "omnicd/errors.hpp"

namespace omnicd {

namespace {
void require_known(const std::string& cls, const std::vector<std::string>& registry) {
    if (std::find(registry.begin(), registry.end(), cls) == registry.end())
        throw DataError("render_prompt: unknown class '" + cls + "'");
}
}  // namespace

std::string render_prompt(const ChangeSpec& spec, const std::vector<std::string>& registry) {
    std::string fill;
    if (const auto* single = std::get_if<std::string>(&spec)) {
        require_known(*single, registry);
        fill = *single;
    } else if (const auto* set = std::get_if<std::vector<std::string>>(&spec)) {
        if (set->empty()) throw DataError("render_prompt: empty class set");
        for (const auto& c : *set) require_known(c, registry);
        // join in registry order
        bool first = true;
        for (const auto& r : registry) {
            if (std::find(set->begin(), set->end(), r) == set->end()) continue;
            if (!first) fill += " and ";
            fill += r;
            first = false;
        }
    } else {
        const auto& pr = std::get<std::pair<std::string, std::string>>(spec);
        require_known(pr.first, registry);
        require_known(pr.second, registry);
        fill = pr.first + " to " + pr.second;
    }
    return "Identify changes in " + fill + " in the image.";
}

ConfidenceMap reference_confidence(const ReferencePrompt& ref, const Tensor& test_image,
                                   const ImageEncoder& encoder, bool aggregate_max) {
    int s = encoder.cfg.input_size, g = encoder.cfg.grid_side();
    if (ref.mask.ndim() != 2 || ref.mask.dim(0) != s || ref.mask.dim(1) != s)
        throw ShapeError("reference_confidence: mask must match input size");
    if (ref.mask.data.sum() < 1.0)
        throw DataError("reference_confidence: reference mask has no foreground");

    Tensor ref_emb = encoder.encode(constant(ref.image)).data->v;    // [D,g,g]
    Tensor test_emb = encoder.encode(constant(test_image)).data->v;  // [D,g,g]
    int d = ref_emb.dim(0);
    int blk = s / g;

    // nearest downsample of the mask to the embedding grid
    std::vector<std::pair<int, int>> fg;
    for (int y = 0; y < g; ++y)
        for (int x = 0; x < g; ++x) {
            int sy = y * blk + blk / 2, sx = x * blk + blk / 2;
            if (ref.mask.data[static_cast<std::int64_t>(sy) * s + sx] != 0.0) fg.emplace_back(y, x);
        }
    if (fg.empty())
        throw DataError("reference_confidence: no foreground cells after downsampling");

    auto cell = [d, g](const Tensor& emb, int y, int x) {
        Eigen::ArrayXd v(d);
        for (int c = 0; c < d; ++c) v[c] = emb.at3(c, y, x);
        return v;
    };

    Tensor agg = Tensor::zeros(Shape{g, g});
    Tensor agg_max = Tensor::full(Shape{g, g}, -1.0);
    for (const auto& [fy, fx] : fg) {
        Eigen::ArrayXd desc = cell(ref_emb, fy, fx);
        double dn = std::sqrt(desc.square().sum());
        Tensor simmap(Shape{g, g});
        for (int y = 0; y < g; ++y)
            for (int x = 0; x < g; ++x) {
                Eigen::ArrayXd t = cell(test_emb, y, x);
                double tn = std::sqrt(t.square().sum());
                double denom = std::max(dn * tn, 1e-12);
                simmap.data[static_cast<std::int64_t>(y) * g + x] = (desc * t).sum() / denom;
            }
        double lo = simmap.data.minCoeff(), hi = simmap.data.maxCoeff();
        if (hi - lo > 1e-12)
            simmap.data = (simmap.data - lo) / (hi - lo);
        else
            simmap.data.setConstant(0.5);  // flat map: every cell votes equally
        agg.data += simmap.data;
        agg_max.data = agg_max.data.max(simmap.data);
    }
    ConfidenceMap out;
    if (aggregate_max) {
        out.data = agg_max;
    } else {
        agg.data /= static_cast<double>(fg.size());
        out.data = agg;
    }
    return out;
}

DensePromptProj::DensePromptProj(int embed_dim, Rng& rng) {
    proj = Conv2d(1, embed_dim, 1, 1, 0, rng);
}

Var DensePromptProj::fwd(const Tensor& conf) const {
    if (conf.ndim() != 2) throw ShapeError("dense_prompt: expected [S/8,S/8] map");
    Tensor c3(Shape{1, conf.dim(0), conf.dim(1)});
    c3.data = conf.data;
    return proj.fwd(constant(std::move(c3)));
}

void DensePromptProj::params(NamedParams& out, const std::string& prefix) const {
    proj.params(out, prefix + ".proj");
}

}  // namespace omnicd

#include "omnicd/detector.hpp"

#include "omnicd/errors.hpp"

namespace omnicd {

Var change_features(const ImageEmbedding& emb1, const ImageEmbedding& emb2) {
    if (emb1.data->v.shape != emb2.data->v.shape)
        throw ShapeError("change_features: embedding shape mismatch");
    return abs_(sub(emb1.data, emb2.data));
}

Detector::Detector(const ModelConfig& c, Rng& rng) : cfg(c) {
    int d = c.embed_dim;
    int nb = static_cast<int>(c.psp_bins.size());
    int base = d / nb, rem = d - base * nb;
    for (int i = 0; i < nb; ++i) {
        int ch = base + (i == 0 ? rem : 0);  // remainder goes to the first branch
        branches.push_back(Conv2d(d, ch, 1, 1, 0, rng));
    }
    fuse = Conv2d(2 * d, d, 3, 1, 1, rng);
    head = Conv2d(d, d, 3, 1, 1, rng);
    out = Conv2d(d, 1, 1, 1, 0, rng);
}

Var Detector::psp_forward(const Var& feat) const {
    int h = feat->v.dim(1), w = feat->v.dim(2);
    if (feat->v.dim(0) != cfg.embed_dim) throw ShapeError("psp_forward: channel mismatch");
    for (int b : cfg.psp_bins)
        if (b > h || b > w) throw DataError("psp_forward: bin exceeds feature size");
    Var cat = feat;
    for (size_t i = 0; i < cfg.psp_bins.size(); ++i) {
        Var p = adaptive_avg_pool(feat, cfg.psp_bins[i]);
        p = relu(branches[i].fwd(p));
        p = bilinear_resize(p, h, w);
        cat = concat_chan(cat, p);
    }
    return relu(fuse.fwd(cat));
}

std::pair<Var, Var> Detector::detect(const Var& feat, const ROIAttentionMap& roi) const {
    int s = cfg.input_size;
    if (roi.data->v.dim(1) != s || roi.data->v.dim(2) != s)
        throw ShapeError("detect: roi resolution does not match input size");
    Var x = psp_forward(feat);
    x = relu(head.fwd(x));
    Var logits = out.fwd(x);  // [1, S/8, S/8]
    logits = bilinear_resize(logits, s, s);
    Var raw = sigmoid(logits);
    Var filtered = mul(raw, roi.data);
    return {raw, filtered};
}

void Detector::params(NamedParams& out_, const std::string& prefix) const {
    for (size_t i = 0; i < branches.size(); ++i)
        branches[i].params(out_, prefix + ".branch" + std::to_string(i));
    fuse.params(out_, prefix + ".fuse");
    head.params(out_, prefix + ".head");
    out.params(out_, prefix + ".out");
}

}  // namespace omnicd

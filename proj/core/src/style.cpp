#include "omnicd/style.hpp"

#include <iostream>

#include "omnicd/errors.hpp"

namespace omnicd {

std::pair<Var, Var> channel_stats(const Var& x) {
    if (x->v.ndim() != 3) throw ShapeError("channel_stats: expected [C,H,W]");
    int h = x->v.dim(1), w = x->v.dim(2);
    Var mu = spatial_mean(x);
    Var centered = sub(x, broadcast_chan(mu, h, w));
    Var var = spatial_mean(square(centered));
    Var sd = sqrt_(add_scalar(var, 1e-12));
    return {mu, sd};
}

Var adain(const Var& content, const Var& mu, const Var& sigma, double eps) {
    if (content->v.ndim() != 3) throw ShapeError("adain: content must be [C,H,W]");
    int c = content->v.dim(0), h = content->v.dim(1), w = content->v.dim(2);
    if (mu->v.numel() != c || sigma->v.numel() != c)
        throw ShapeError("adain: style width does not match content channels");
    auto [cm, cs] = channel_stats(content);
    for (int i = 0; i < c; ++i)
        if (cs->v.data[i] < eps) {
            std::cerr << "[omnicd] adain: degenerate channel " << i
                      << " (std < eps), output collapses to style mean\n";
            break;
        }
    Var denom = clamp(cs, eps, 1e30);
    Var norm = div_(sub(content, broadcast_chan(cm, h, w)), broadcast_chan(denom, h, w));
    return add(mul(norm, broadcast_chan(sigma, h, w)), broadcast_chan(mu, h, w));
}

std::pair<Var, Var> style_params(const StyleVector& s) {
    int d = static_cast<int>(s.data->v.numel());
    Var flat = reshape(s.data, Shape{1, d});
    Var mu = reshape(slice_cols(flat, 0, d / 2), Shape{d / 2});
    Var raw = reshape(slice_cols(flat, d / 2, d / 2), Shape{d / 2});
    return {mu, softplus(raw)};
}

StyleEncoder::StyleEncoder(int d, int input_size, Rng& rng, std::array<int, 3> ks)
    : kernels(ks), embed_dim(d) {
    (void)input_size;
    c1 = Conv2d(3, 16, ks[0], 1, ks[0] / 2, rng);
    c2 = Conv2d(16, 32, ks[1], 1, ks[1] / 2, rng);
    c3 = Conv2d(32, 32, ks[2], 1, ks[2] / 2, rng);
    fc = Linear(32, d, rng);
}

StyleVector StyleEncoder::encode(const Var& image) const {
    if (image->v.ndim() != 3 || image->v.dim(0) != 3)
        throw ShapeError("encode_style: expected [3,S,S]");
    Var x = avg_pool2x2(relu(c1.fwd(image)));
    x = avg_pool2x2(relu(c2.fwd(x)));
    x = avg_pool2x2(relu(c3.fwd(x)));
    x = adaptive_avg_pool(x, 1);               // [32,1,1]
    Var pooled = reshape(x, Shape{1, 32});
    StyleVector s;
    s.data = reshape(fc.fwd(pooled), Shape{embed_dim});
    return s;
}

void StyleEncoder::params(NamedParams& out, const std::string& prefix) const {
    c1.params(out, prefix + ".c1");
    c2.params(out, prefix + ".c2");
    c3.params(out, prefix + ".c3");
    fc.params(out, prefix + ".fc");
}

ReconDecoder::ReconDecoder(const ModelConfig& c, Rng& rng) : cfg(c) {
    int d = c.embed_dim;
    const int chans[3] = {32, 16, 8};
    const int kers[3] = {7, 3, 3};  // kernel 7 on the first (smallest) stage
    stem = Conv2d(d, chans[0], 1, 1, 0, rng);
    int prev = chans[0];
    for (int i = 0; i < 3; ++i) {
        Block& b = blocks[static_cast<size_t>(i)];
        b.out_ch = chans[i];
        b.skip = Conv2d(d, 16, 1, 1, 0, rng);
        b.fuse = Conv2d(prev + 16, chans[i], kers[i], 1, kers[i] / 2, rng);
        b.style_proj = Linear(d, 2 * chans[i], rng);
        prev = chans[i];
    }
    out_conv = Conv2d(chans[2], 3, 3, 1, 1, rng);
}

Var ReconDecoder::reconstruct(const ContentFeature& content, const StyleVector& style) const {
    int g = cfg.grid_side(), d = cfg.embed_dim;
    if (content.data->v.dim(0) != d || content.data->v.dim(1) != g ||
        content.data->v.dim(2) != g)
        throw ShapeError("reconstruct: content grid does not match config");
    Var style_row = reshape(style.data, Shape{1, d});
    Var x = stem.fwd(content.data);
    int cur = g;
    for (const auto& b : blocks) {
        cur *= 2;
        x = bilinear_resize(x, cur, cur);
        Var skip = b.skip.fwd(bilinear_resize(content.data, cur, cur));
        x = b.fuse.fwd(concat_chan(x, skip));
        Var sp = b.style_proj.fwd(style_row);  // [1, 2*ch]
        Var mu = reshape(slice_cols(sp, 0, b.out_ch), Shape{b.out_ch});
        Var sigma = softplus(reshape(slice_cols(sp, b.out_ch, b.out_ch), Shape{b.out_ch}));
        x = relu(adain(x, mu, sigma));
    }
    return sigmoid(out_conv.fwd(x));  // [3,S,S]
}

void ReconDecoder::params(NamedParams& out, const std::string& prefix) const {
    stem.params(out, prefix + ".stem");
    for (size_t i = 0; i < blocks.size(); ++i) {
        std::string p = prefix + ".block" + std::to_string(i);
        blocks[i].skip.params(out, p + ".skip");
        blocks[i].fuse.params(out, p + ".fuse");
        blocks[i].style_proj.params(out, p + ".style_proj");
    }
    out_conv.params(out, prefix + ".out_conv");
}

}  // namespace omnicd

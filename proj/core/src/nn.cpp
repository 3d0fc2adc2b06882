#include "omnicd/nn.hpp"

#include <cmath>

#include "omnicd/errors.hpp"

namespace omnicd {

Tensor xavier(Shape s, int fan_in, int fan_out, Rng& rng) {
    Tensor t(std::move(s));
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.uniform(-a, a);
    return t;
}

Var chw_to_tokens(const Var& x) {
    int c = x->v.dim(0), h = x->v.dim(1), w = x->v.dim(2);
    return transpose(reshape(x, Shape{c, h * w}));
}

Var tokens_to_chw(const Var& t, int h, int w) {
    int c = t->v.dim(1);
    return reshape(transpose(t), Shape{c, h, w});
}

Tensor sincos_pos2d(int h, int w, int dim) {
    // half the channels encode y, half encode x
    Tensor out = Tensor::zeros(Shape{h * w, dim});
    int half = dim / 2;
    int quarter = std::max(1, half / 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int row = y * w + x;
            for (int i = 0; i < half; ++i) {
                double freq = std::pow(10000.0, -static_cast<double>(i / 2) / quarter);
                double vy = y * freq, vx = x * freq;
                out.data[static_cast<std::int64_t>(row) * dim + i] =
                    (i % 2 == 0) ? std::sin(vy) : std::cos(vy);
                int j = half + i;
                if (j < dim)
                    out.data[static_cast<std::int64_t>(row) * dim + j] =
                        (i % 2 == 0) ? std::sin(vx) : std::cos(vx);
            }
        }
    return out;
}

Linear::Linear(int in, int out, Rng& rng) {
    w = leaf(xavier(Shape{in, out}, in, out, rng));
    b = leaf(Tensor::zeros(Shape{out}));
}

Var Linear::fwd(const Var& x) const { return add_rowvec(matmul(x, w), b); }

void Linear::params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

LayerNorm::LayerNorm(int dim) {
    gamma = leaf(Tensor::full(Shape{dim}, 1.0));
    beta = leaf(Tensor::zeros(Shape{dim}));
}

Var LayerNorm::fwd(const Var& x) const { return layer_norm_rows(x, gamma, beta, eps); }

Var LayerNorm::fwd_chw(const Var& x) const {
    int h = x->v.dim(1), w = x->v.dim(2);
    return tokens_to_chw(layer_norm_rows(chw_to_tokens(x), gamma, beta, eps), h, w);
}

void LayerNorm::params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

Conv2d::Conv2d(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
    w = leaf(xavier(Shape{cout, cin, k, k}, cin * k * k, cout * k * k, rng));
    b = leaf(Tensor::zeros(Shape{cout}));
}

Var Conv2d::fwd(const Var& x) const { return conv2d(x, w, b, stride, pad); }

void Conv2d::params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

ConvT2x2::ConvT2x2(int cin, int cout, Rng& rng) {
    w = leaf(xavier(Shape{cin, cout, 2, 2}, cin * 4, cout * 4, rng));
    b = leaf(Tensor::zeros(Shape{cout}));
}

Var ConvT2x2::fwd(const Var& x) const { return conv_transpose2x2(x, w, b); }

void ConvT2x2::params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

MultiheadAttention::MultiheadAttention(int dim_q, int dim_kv, int inner_, int heads_, Rng& rng)
    : heads(heads_), inner(inner_) {
    if (inner % heads) throw DataError("attention inner width not divisible by head count");
    q = Linear(dim_q, inner, rng);
    k = Linear(dim_kv, inner, rng);
    v = Linear(dim_kv, inner, rng);
    o = Linear(inner, dim_q, rng);
}

Var MultiheadAttention::fwd(const Var& qx, const Var& kx, const Var& vx) const {
    Var Q = q.fwd(qx), K = k.fwd(kx), V = v.fwd(vx);
    int dh = inner / heads;
    double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = slice_cols(Q, h * dh, dh);
        Var kh = slice_cols(K, h * dh, dh);
        Var vh = slice_cols(V, h * dh, dh);
        Var att = softmax_rows(scale(matmul(qh, transpose(kh)), sc));
        outs.push_back(matmul(att, vh));
    }
    return o.fwd(concat_cols(outs));
}

void MultiheadAttention::params(NamedParams& out, const std::string& prefix) const {
    q.params(out, prefix + ".q");
    k.params(out, prefix + ".k");
    v.params(out, prefix + ".v");
    o.params(out, prefix + ".o");
}

Mlp::Mlp(int dim, int hidden, int out, Rng& rng, bool use_gelu_) : use_gelu(use_gelu_) {
    fc1 = Linear(dim, hidden, rng);
    fc2 = Linear(hidden, out, rng);
}

Var Mlp::fwd(const Var& x) const {
    Var h = fc1.fwd(x);
    h = use_gelu ? gelu(h) : relu(h);
    return fc2.fwd(h);
}

void Mlp::params(NamedParams& out, const std::string& prefix) const {
    fc1.params(out, prefix + ".fc1");
    fc2.params(out, prefix + ".fc2");
}

}  // namespace omnicd

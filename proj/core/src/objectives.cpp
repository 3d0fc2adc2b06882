#include "omnicd/objectives.hpp"

#include <cmath>
#include <iostream>

#include "omnicd/errors.hpp"

namespace omnicd {

Var change_detection_loss(const Var& prob, const Tensor& target) {
    if (prob->v.numel() != target.numel())
        throw ShapeError("change_detection_loss: prob/target size mismatch");
    for (std::int64_t i = 0; i < target.numel(); ++i)
        if (target.data[i] != 0.0 && target.data[i] != 1.0)
            throw DataError("change_detection_loss: target is not binary");

    Var p = clamp(prob, 1e-7, 1.0 - 1e-7);
    Tensor t = target;
    t.shape = prob->v.shape;
    Tensor tn(t.shape);
    tn.data = 1.0 - t.data;
    Var bce = neg(mean_all(add(mul_mask(log_(p), t),
                               mul_mask(log_(add_scalar(neg(p), 1.0)), tn))));

    const double smooth = 1.0;
    double tsum = t.data.sum();
    Var inter = sum_all(mul_mask(p, t));
    Var num = add_scalar(scale(inter, 2.0), smooth);
    Var den = add_scalar(sum_all(p), tsum + smooth);
    Var dice = add_scalar(neg(div_(num, den)), 1.0);
    return add(bce, dice);
}

Var separation_loss(const ContentFeature& content, const StyleVector& style) {
    Var pooled = spatial_mean(content.data);  // [C]
    if (pooled->v.numel() != style.data->v.numel())
        throw ShapeError("separation_loss: width mismatch");
    double np = pooled->v.data.matrix().squaredNorm();
    double ns = style.data->v.data.matrix().squaredNorm();
    if (np < 1e-24 || ns < 1e-24) return constant(Tensor::scalar(0.0));
    Var dot = sum_all(mul(pooled, style.data));
    Var denom = mul(sum_all(square(pooled)), sum_all(square(style.data)));
    return div_(square(dot), denom);
}

Tensor unchanged_cell_grid(const Tensor& change_mask, int grid) {
    int s = change_mask.dim(0);
    if (change_mask.ndim() != 2 || change_mask.dim(1) != s || s % grid != 0)
        throw ShapeError("unchanged_cell_grid: mask not square or not divisible by grid");
    int blk = s / grid;
    Tensor out = Tensor::zeros(Shape{grid, grid});
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            bool clean = true;
            for (int y = gy * blk; clean && y < (gy + 1) * blk; ++y)
                for (int x = gx * blk; x < (gx + 1) * blk; ++x)
                    if (change_mask.data[static_cast<std::int64_t>(y) * s + x] != 0.0) {
                        clean = false;
                        break;
                    }
            out.data[static_cast<std::int64_t>(gy) * grid + gx] = clean ? 1.0 : 0.0;
        }
    return out;
}

namespace {
std::pair<Var, Var> masked_stats(const Var& x, const Tensor& mask, double n) {
    Var m = scale(spatial_sum(mul_mask(x, mask)), 1.0 / n);
    Var ex2 = scale(spatial_sum(mul_mask(square(x), mask)), 1.0 / n);
    Var var = sub(ex2, square(m));
    // clamp tiny negatives from cancellation
    Var sd = sqrt_(add_scalar(clamp(var, 0.0, 1e30), 1e-12));
    return {m, sd};
}
}  // namespace

Var content_similarity_loss(const ContentFeature& c1, const ContentFeature& c2,
                            const Tensor& unchanged) {
    if (c1.data->v.shape != c2.data->v.shape)
        throw ShapeError("content_similarity_loss: content shape mismatch");
    double n = unchanged.data.sum();
    if (n == 0.0) {
        std::cerr << "[omnicd] content_similarity_loss: no unchanged cells, loss = 0\n";
        return constant(Tensor::scalar(0.0));
    }
    auto [m1, sd1] = masked_stats(c1.data, unchanged, n);
    auto [m2, sd2] = masked_stats(c2.data, unchanged, n);
    return add(mean_all(square(sub(m1, m2))), mean_all(square(sub(sd1, sd2))));
}

Var reconstruction_loss(const Var& recon1, const Tensor& img1, const Var& recon2,
                        const Tensor& img2) {
    if (recon1->v.shape != img1.shape || recon2->v.shape != img2.shape)
        throw ShapeError("reconstruction_loss: shape mismatch");
    Var a = mean_all(abs_(sub(recon1, constant(img1))));
    Var b = mean_all(abs_(sub(recon2, constant(img2))));
    return scale(add(a, b), 0.5);
}

LossReport total_loss(const Var& l_cd, const Var& l_sep, const Var& l_content, const Var& l_rec,
                      const std::array<double, 3>& lambdas) {
    auto check = [](const Var& v, const char* name) {
        if (!std::isfinite(v->v.data[0]))
            throw NumericError(std::string("total_loss: non-finite component ") + name);
    };
    check(l_cd, "l_cd");
    check(l_sep, "l_sep");
    check(l_content, "l_content");
    check(l_rec, "l_rec");
    LossReport r;
    r.l_cd = l_cd;
    r.l_sep = l_sep;
    r.l_content = l_content;
    r.l_rec = l_rec;
    r.total = add(add(l_cd, scale(l_sep, lambdas[0])),
                  add(scale(l_content, lambdas[1]), scale(l_rec, lambdas[2])));
    return r;
}

}  // namespace omnicd

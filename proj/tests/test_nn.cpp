#include <doctest.h>

#include <cmath>

#include "omnicd/nn.hpp"

using namespace omnicd;

namespace {
Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.uniform(lo, hi);
    return t;
}
}  // namespace

TEST_CASE("xavier bounds follow fan sizes") {
    Rng rng(0);
    Tensor w = xavier({64, 32}, 64, 32, rng);
    double bound = std::sqrt(6.0 / (64 + 32));
    CHECK(w.data.abs().maxCoeff() <= bound);
    CHECK(w.data.abs().maxCoeff() > bound * 0.5);  // actually fills the range
}

TEST_CASE("chw/token round trip preserves layout") {
    Rng rng(1);
    Tensor x = random_tensor({3, 2, 4}, rng);
    Var tokens = chw_to_tokens(constant(x));
    REQUIRE(tokens->v.shape == Shape{8, 3});
    // token row index = y*w + x, column = channel
    CHECK(tokens->v.at2(1 * 4 + 2, 0) == x.at3(0, 1, 2));
    CHECK(tokens->v.at2(3, 2) == x.at3(2, 0, 3));
    Var back = tokens_to_chw(tokens, 2, 4);
    CHECK(back->v.data.isApprox(x.data));
}

TEST_CASE("sincos positional embedding is unit-bounded and position-distinct") {
    Tensor pos = sincos_pos2d(4, 4, 32);
    REQUIRE(pos.shape == Shape{16, 32});
    CHECK(pos.data.abs().maxCoeff() <= 1.0 + 1e-12);
    bool distinct = false;
    for (int j = 0; j < 32 && !distinct; ++j)
        if (pos.at2(0, j) != pos.at2(5, j)) distinct = true;
    CHECK(distinct);
}

TEST_CASE("Linear matches the affine oracle") {
    Rng rng(2);
    Linear lin(3, 2, rng);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor y = lin.fwd(constant(x))->v;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = lin.b->v.data[j];
            for (int k = 0; k < 3; ++k) acc += x.at2(i, k) * lin.w->v.at2(k, j);
            CHECK(y.at2(i, j) == doctest::Approx(acc));
        }
}

TEST_CASE("LayerNorm fwd_chw normalizes across channels per pixel") {
    Rng rng(3);
    LayerNorm ln(6);
    Tensor x = random_tensor({6, 2, 2}, rng);
    Tensor y = ln.fwd_chw(constant(x))->v;
    REQUIRE(y.shape == x.shape);
    for (int py = 0; py < 2; ++py)
        for (int px = 0; px < 2; ++px) {
            double m = 0;
            for (int c = 0; c < 6; ++c) m += y.at3(c, py, px);
            CHECK(std::abs(m / 6) < 1e-10);
        }
}

TEST_CASE("attention rows are convex mixtures when values are one-hot") {
    Rng rng(4);
    MultiheadAttention attn(8, 8, 8, 2, rng);
    Tensor q = random_tensor({3, 8}, rng), kv = random_tensor({5, 8}, rng);
    Tensor y = attn.fwd(constant(q), constant(kv), constant(kv))->v;
    REQUIRE(y.shape == Shape{3, 8});
    CHECK(y.all_finite());
}

TEST_CASE("attention with halved inner width keeps the query width") {
    Rng rng(5);
    MultiheadAttention attn(16, 16, 8, 2, rng);
    Tensor q = random_tensor({4, 16}, rng), kv = random_tensor({6, 16}, rng);
    CHECK(attn.fwd(constant(q), constant(kv), constant(kv))->v.shape == Shape{4, 16});
}

TEST_CASE("key order does not change attention output") {
    Rng rng(6);
    MultiheadAttention attn(8, 8, 8, 2, rng);
    Tensor q = random_tensor({2, 8}, rng), kv = random_tensor({4, 8}, rng);
    Tensor kv_perm(Shape{4, 8});
    int perm[4] = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) kv_perm.at2(i, j) = kv.at2(perm[i], j);
    Tensor y1 = attn.fwd(constant(q), constant(kv), constant(kv))->v;
    Tensor y2 = attn.fwd(constant(q), constant(kv_perm), constant(kv_perm))->v;
    CHECK((y1.data - y2.data).abs().maxCoeff() < 1e-10);
}

TEST_CASE("Mlp applies two layers with the chosen activation") {
    Rng rng(7);
    Mlp mlp(4, 16, 4, rng, false);  // relu
    Tensor x = random_tensor({2, 4}, rng);
    Tensor h = mlp.fc1.fwd(constant(x))->v;
    Tensor y = mlp.fwd(constant(x))->v;
    REQUIRE(y.shape == Shape{2, 4});
    Tensor hr(h.shape);
    hr.data = h.data.max(0.0);
    Tensor oracle = mlp.fc2.fwd(constant(hr))->v;
    CHECK(y.data.isApprox(oracle.data));
}

TEST_CASE("module parameter registries use stable prefixed names") {
    Rng rng(8);
    Mlp mlp(4, 8, 4, rng);
    NamedParams p;
    mlp.params(p, "mlp");
    REQUIRE(p.size() == 4);
    CHECK(p[0].first.rfind("mlp.", 0) == 0);
    for (const auto& [name, var] : p) CHECK(var->req);
}

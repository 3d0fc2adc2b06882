#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "omnicd/errors.hpp"
#include "omnicd/guide.hpp"

using namespace omnicd;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.input_size = 32;
    c.patch_size = 16;
    c.embed_dim = 16;
    c.encoder_depth = 1;
    c.encoder_heads = 2;
    c.decoder_mlp_dim = 64;
    c.psp_bins = {1, 2, 3};
    c.validate();
    return c;
}

Tensor rand_tensor(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(s));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.normal(0.0, 0.5);
    return t;
}

PromptTokens rand_prompt(int n, int d, std::uint64_t seed) {
    PromptTokens p;
    p.tokens = constant(rand_tensor({n, d}, seed));
    p.has_output_token = true;
    return p;
}

ImageEmbedding rand_emb(const ModelConfig& c, std::uint64_t seed) {
    int g = c.grid_side();
    return ImageEmbedding{constant(rand_tensor({c.embed_dim, g, g}, seed)), c.input_size};
}

void zero_var(const Var& v) { v->v.data.setZero(); }

}  // namespace

TEST_CASE("decoder layer is the identity when residual branches are zeroed") {
    ModelConfig cfg = tiny();
    Rng rng(0);
    GuideDecoder dec(cfg, rng);
    for (auto& l : dec.layers) {
        zero_var(l.self_attn.o.w);
        zero_var(l.self_attn.o.b);
        zero_var(l.t2i.o.w);
        zero_var(l.t2i.o.b);
        zero_var(l.i2t.o.w);
        zero_var(l.i2t.o.b);
        zero_var(l.mlp.fc2.w);
        zero_var(l.mlp.fc2.b);
    }
    DecoderState st;
    st.tokens = constant(rand_tensor({4, cfg.embed_dim}, 1));
    st.image = constant(rand_tensor({16, cfg.embed_dim}, 2));
    DecoderState out = dec.decoder_layer(st);
    CHECK((out.tokens->v.data == st.tokens->v.data).all());
    CHECK((out.image->v.data == st.image->v.data).all());
    CHECK(out.layer_index == 1);
}

TEST_CASE("decoder layer rejects depth overflow and non-finite state") {
    ModelConfig cfg = tiny();
    Rng rng(1);
    GuideDecoder dec(cfg, rng);
    DecoderState st;
    st.tokens = constant(rand_tensor({3, cfg.embed_dim}, 3));
    st.image = constant(rand_tensor({16, cfg.embed_dim}, 4));
    st.layer_index = cfg.decoder_layers;
    CHECK_THROWS_AS(dec.decoder_layer(st), DataError);
    st.layer_index = 0;
    st.tokens->v.data[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(dec.decoder_layer(st), NumericError);
}

TEST_CASE("zeroed output-token MLP gives an identically zero logit map") {
    ModelConfig cfg = tiny();
    Rng rng(2);
    GuideDecoder dec(cfg, rng);
    zero_var(dec.mlp3.w);
    zero_var(dec.mlp3.b);
    Tensor logits = dec.mask_logits(rand_prompt(3, cfg.embed_dim, 5), rand_emb(cfg, 6))->v;
    REQUIRE(logits.shape == Shape{1, 32, 32});
    CHECK(logits.data.abs().maxCoeff() == 0.0);
}

TEST_CASE("mask logits follow the 1/8 -> x4 -> x2 resolution chain") {
    ModelConfig cfg = tiny();  // S=32: grid 4 -> 16 logits -> 32 map
    Rng rng(3);
    GuideDecoder dec(cfg, rng);
    Var logits = dec.mask_logits(rand_prompt(4, cfg.embed_dim, 7), rand_emb(cfg, 8));
    CHECK(logits->v.shape == Shape{1, cfg.input_size, cfg.input_size});
    CHECK(logits->v.all_finite());
}

TEST_CASE("generate_roi equals the loop oracle sigmoid+max and lies in [0,1]") {
    ModelConfig cfg = tiny();
    Rng rng(4);
    GuideDecoder dec(cfg, rng);
    PromptTokens p = rand_prompt(4, cfg.embed_dim, 9);
    ImageEmbedding e1 = rand_emb(cfg, 10), e2 = rand_emb(cfg, 11);
    Tensor l1 = dec.mask_logits(p, e1)->v;
    Tensor l2 = dec.mask_logits(p, e2)->v;
    Tensor roi = dec.generate_roi(p, e1, e2).data->v;
    for (std::int64_t i = 0; i < roi.numel(); ++i) {
        double s1 = 1.0 / (1.0 + std::exp(-l1.data[i]));
        double s2 = 1.0 / (1.0 + std::exp(-l2.data[i]));
        CHECK(std::abs(roi.data[i] - std::max(s1, s2)) < 1e-12);
        CHECK(roi.data[i] >= 0.0);
        CHECK(roi.data[i] <= 1.0);
        CHECK(roi.data[i] >= s1 - 1e-12);
        CHECK(roi.data[i] >= s2 - 1e-12);
    }
}

TEST_CASE("generate_roi is symmetric in the temporal embeddings") {
    ModelConfig cfg = tiny();
    Rng rng(5);
    GuideDecoder dec(cfg, rng);
    PromptTokens p = rand_prompt(3, cfg.embed_dim, 12);
    ImageEmbedding e1 = rand_emb(cfg, 13), e2 = rand_emb(cfg, 14);
    Tensor a = dec.generate_roi(p, e1, e2).data->v;
    Tensor b = dec.generate_roi(p, e2, e1).data->v;
    CHECK((a.data == b.data).all());
    Tensor self = dec.generate_roi(p, e1, e1).data->v;
    Tensor single = sigmoid(dec.mask_logits(p, e1))->v;
    CHECK((self.data == single.data).all());
}

TEST_CASE("generate_roi rejects mismatched embeddings") {
    ModelConfig cfg = tiny();
    Rng rng(6);
    GuideDecoder dec(cfg, rng);
    ImageEmbedding e1 = rand_emb(cfg, 15);
    ImageEmbedding bad{constant(rand_tensor({cfg.embed_dim, 2, 2}, 16)), cfg.input_size};
    CHECK_THROWS_AS(dec.generate_roi(rand_prompt(2, cfg.embed_dim, 17), e1, bad), ShapeError);
}

TEST_CASE("without positional encodings the decoder layer is token-order equivariant") {
    ModelConfig cfg = tiny();
    Rng rng(7);
    GuideDecoder dec(cfg, rng);
    dec.img_pos.data.setZero();
    DecoderState st;
    st.tokens = constant(rand_tensor({3, cfg.embed_dim}, 18));
    Tensor img = rand_tensor({16, cfg.embed_dim}, 19);
    st.image = constant(img);
    DecoderState base = dec.decoder_layer(st);

    std::vector<int> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 prng(20);
    std::shuffle(perm.begin(), perm.end(), prng);
    Tensor img_p(Shape{16, cfg.embed_dim});
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < cfg.embed_dim; ++j) img_p.at2(i, j) = img.at2(perm[i], j);
    DecoderState stp;
    stp.tokens = st.tokens;
    stp.image = constant(img_p);
    DecoderState out = dec.decoder_layer(stp);

    CHECK((out.tokens->v.data - base.tokens->v.data).abs().maxCoeff() < 1e-10);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < cfg.embed_dim; ++j)
            CHECK(out.image->v.at2(i, j) ==
                  doctest::Approx(base.image->v.at2(perm[i], j)).epsilon(1e-9));
}

TEST_CASE("dropout only perturbs training mode") {
    ModelConfig cfg = tiny();
    Rng rng(8);
    GuideDecoder dec(cfg, rng);
    PromptTokens p = rand_prompt(3, cfg.embed_dim, 21);
    ImageEmbedding e1 = rand_emb(cfg, 22), e2 = rand_emb(cfg, 23);
    Tensor a = dec.generate_roi(p, e1, e2).data->v;
    Tensor b = dec.generate_roi(p, e1, e2).data->v;
    CHECK((a.data == b.data).all());
    Rng drop(99);
    Tensor c = dec.generate_roi(p, e1, e2, true, &drop).data->v;
    CHECK((a.data != c.data).any());
}

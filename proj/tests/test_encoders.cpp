#include <doctest.h>

#include "omnicd/encoders.hpp"
#include "omnicd/errors.hpp"

using namespace omnicd;

namespace {

ModelConfig desk() {
    ModelConfig c;  // defaults are the desk configuration
    c.encoder_depth = 2;
    c.decoder_mlp_dim = 128;
    return c;
}

Tensor rand_image(int s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(Shape{3, s, s});
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.uniform(0.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("tokenizer maps the template sentence to vocabulary ids") {
    Tokenizer tok(ModelConfig::default_vocab());
    auto ids = tok.tokenize("Identify changes in buildings in the image.", 32);
    std::vector<int> expect = {tok.id_of("identify"), tok.id_of("changes"), tok.id_of("in"),
                               tok.id_of("buildings"), tok.id_of("in"),     tok.id_of("the"),
                               tok.id_of("image"),     tok.id_of(".")};
    CHECK(ids == expect);
    for (int id : ids) CHECK(id < tok.vocab_size());
    CHECK(ids.size() <= 32);
}

TEST_CASE("tokenizer lowercases, truncates, rejects empty text") {
    Tokenizer tok(ModelConfig::default_vocab());
    auto ids = tok.tokenize("buildings BUILDINGS Buildings", 32);
    REQUIRE(ids.size() == 3);
    CHECK(ids[0] == ids[1]);
    CHECK(ids[1] == ids[2]);
    CHECK(tok.tokenize("identify changes in the image .", 3).size() == 3);
    CHECK_THROWS_AS(tok.tokenize("", 32), DataError);
    CHECK_THROWS_AS(tok.tokenize("   ", 32), DataError);
    CHECK(tok.id_of("zzzunknown") == 1);
}

TEST_CASE("image embedding is embed_dim x S/8 x S/8") {
    ModelConfig cfg = desk();
    Rng rng(0);
    ImageEncoder enc(cfg, rng);
    Tensor img = rand_image(cfg.input_size, 7);
    ImageEmbedding emb = enc.encode(constant(img));
    CHECK(emb.data->v.shape == Shape{64, 16, 16});
    CHECK(emb.data->v.all_finite());
    CHECK(emb.source_size == 128);
}

TEST_CASE("image encoding is deterministic (Siamese property)") {
    ModelConfig cfg = desk();
    Rng rng(1);
    ImageEncoder enc(cfg, rng);
    Tensor img = rand_image(cfg.input_size, 9);
    Tensor a = enc.encode(constant(img)).data->v;
    Tensor b = enc.encode(constant(img)).data->v;
    CHECK((a.data == b.data).all());
}

TEST_CASE("image encoder rejects bad inputs") {
    ModelConfig cfg = desk();
    Rng rng(2);
    ImageEncoder enc(cfg, rng);
    CHECK_THROWS_AS(enc.encode(constant(Tensor::zeros({3, 64, 64}))), ShapeError);
    Tensor img = rand_image(cfg.input_size, 3);
    img.data[0] = 2.5;  // out of [0,1]
    CHECK_THROWS_AS(enc.encode(constant(img)), DataError);
    Tensor img2 = rand_image(cfg.input_size, 4);
    img2.data[5] = std::nan("");
    CHECK_THROWS_AS(enc.encode(constant(img2)), NumericError);
}

TEST_CASE("prompt tokens start with the output token and stay within 20") {
    ModelConfig cfg = desk();
    Rng rng(3);
    TextEncoder enc(cfg, rng);
    auto [tokens, pooled] = enc.encode("Identify changes in red squares in the image.");
    CHECK(tokens.has_output_token);
    CHECK(tokens.token_count() >= 1);
    CHECK(tokens.token_count() <= 20);
    CHECK(tokens.tokens->v.dim(1) == cfg.embed_dim);
    for (int j = 0; j < cfg.embed_dim; ++j)
        CHECK(tokens.tokens->v.at2(0, j) == enc.output_token->v.at2(0, j));
    CHECK(pooled->v.shape == Shape{1, 64});
    CHECK(pooled->v.all_finite());
}

TEST_CASE("pooled embedding ignores trailing whitespace (pad invariance)") {
    ModelConfig cfg = desk();
    Rng rng(4);
    TextEncoder enc(cfg, rng);
    Tensor a = enc.encode("Identify changes in blue disks in the image.").second->v;
    Tensor b = enc.encode("  Identify changes in blue disks in the image.   ").second->v;
    CHECK((a.data == b.data).all());
}

TEST_CASE("single-token prompt pools to that token's projected feature") {
    ModelConfig cfg = desk();
    Rng rng(5);
    TextEncoder enc(cfg, rng);
    auto [tokens, pooled] = enc.encode("buildings");
    auto ids = enc.tok.tokenize("buildings", cfg.text_max_len);
    Tensor feats = enc.encode_tokens(ids)->v;  // [1,D]
    Tensor oracle = enc.pool_proj.fwd(constant(feats))->v;
    CHECK(pooled->v.data.isApprox(oracle.data, 1e-12));
}

TEST_CASE("output_token_only yields a single-row prompt") {
    ModelConfig cfg = desk();
    Rng rng(6);
    TextEncoder enc(cfg, rng);
    PromptTokens p = output_token_only(enc);
    CHECK(p.token_count() == 1);
    CHECK(p.has_output_token);
}

TEST_CASE("paper-scale config keeps the 8x downsample contract") {
    ModelConfig cfg;
    cfg.input_size = 512;
    cfg.embed_dim = 256;
    cfg.encoder_depth = 1;  // shape check only
    cfg.decoder_mlp_dim = 64;
    cfg.validate();
    Rng rng(7);
    ImageEncoder enc(cfg, rng);
    Tensor img = rand_image(512, 11);
    CHECK(enc.encode(constant(img)).data->v.shape == Shape{256, 64, 64});
}

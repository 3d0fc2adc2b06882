#include <doctest.h>

#include <algorithm>
#include <random>

#include "omnicd/errors.hpp"
#include "omnicd/prompting.hpp"

using namespace omnicd;

namespace {

const std::vector<std::string> kRegistry = {"buildings", "water bodies", "bare land",
                                            "landslide"};

ModelConfig tiny() {
    ModelConfig c;
    c.input_size = 32;
    c.patch_size = 16;
    c.embed_dim = 16;
    c.encoder_depth = 1;
    c.encoder_heads = 2;
    c.psp_bins = {1, 2};
    c.validate();
    return c;
}

Tensor rand_image(int s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(Shape{3, s, s});
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.uniform(0.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("render_prompt matches the published templates byte for byte") {
    CHECK(render_prompt(std::string("buildings"), kRegistry) ==
          "Identify changes in buildings in the image.");
    CHECK(render_prompt(std::string("landslide"), kRegistry) ==
          "Identify changes in landslide in the image.");
    CHECK(render_prompt(std::make_pair(std::string("water bodies"), std::string("bare land")),
                        kRegistry) ==
          "Identify changes in water bodies to bare land in the image.");
}

TEST_CASE("class sets join with ' and ' in registry order") {
    std::vector<std::string> set = {"bare land", "buildings"};  // reversed on purpose
    CHECK(render_prompt(set, kRegistry) ==
          "Identify changes in buildings and bare land in the image.");
    CHECK_THROWS_AS(render_prompt(std::string("volcano"), kRegistry), DataError);
    CHECK_THROWS_AS(render_prompt(std::vector<std::string>{}, kRegistry), DataError);
}

TEST_CASE("self-reference confidence peaks on the masked object") {
    ModelConfig cfg = tiny();
    Rng rng(0);
    ImageEncoder enc(cfg, rng);
    int s = cfg.input_size, g = cfg.grid_side();

    Tensor img = rand_image(s, 1);
    // paint a bright distinctive block over cells (0..1, 0..1)
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) img.at3(c, y, x) = c == 0 ? 1.0 : 0.0;
    ReferencePrompt ref;
    ref.image = img;
    ref.mask = Tensor::zeros({s, s});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) ref.mask.at2(y, x) = 1.0;

    ConfidenceMap conf = reference_confidence(ref, img, enc);
    REQUIRE(conf.data.shape == Shape{g, g});
    CHECK(conf.data.data.minCoeff() >= 0.0);
    CHECK(conf.data.data.maxCoeff() <= 1.0);
    double fg = 0, bg = 0;
    int nfg = 0, nbg = 0;
    int blk = s / g;
    for (int y = 0; y < g; ++y)
        for (int x = 0; x < g; ++x) {
            bool in = (y * blk + blk / 2) < 16 && (x * blk + blk / 2) < 16;
            (in ? fg : bg) += conf.data.at2(y, x);
            (in ? nfg : nbg) += 1;
        }
    CHECK(fg / nfg > bg / nbg);
}

TEST_CASE("reference confidence validates the mask") {
    ModelConfig cfg = tiny();
    Rng rng(2);
    ImageEncoder enc(cfg, rng);
    int s = cfg.input_size;
    ReferencePrompt ref;
    ref.image = rand_image(s, 3);
    ref.mask = Tensor::zeros({s, s});
    CHECK_THROWS_AS(reference_confidence(ref, ref.image, enc), DataError);  // no foreground
    ref.mask = Tensor::zeros({16, 16});
    CHECK_THROWS_AS(reference_confidence(ref, ref.image, enc), ShapeError);
}

TEST_CASE("aggregate equals the loop-computed mean of normalized descriptor maps") {
    ModelConfig cfg = tiny();
    Rng rng(4);
    ImageEncoder enc(cfg, rng);
    int s = cfg.input_size, g = cfg.grid_side(), blk = s / g;

    ReferencePrompt ref;
    ref.image = rand_image(s, 5);
    ref.mask = Tensor::zeros({s, s});
    for (int y = 0; y < 2 * blk; ++y)
        for (int x = 0; x < blk; ++x) ref.mask.at2(y, x) = 1.0;
    Tensor test_img = rand_image(s, 6);
    ConfidenceMap conf = reference_confidence(ref, test_img, enc);

    Tensor re = enc.encode(constant(ref.image)).data->v;
    Tensor te = enc.encode(constant(test_img)).data->v;
    int d = re.dim(0);
    auto cell = [&](const Tensor& e, int y, int x) {
        std::vector<double> v(static_cast<size_t>(d));
        for (int c = 0; c < d; ++c) v[static_cast<size_t>(c)] = e.at3(c, y, x);
        return v;
    };
    Tensor acc = Tensor::zeros({g, g});
    int ndesc = 0;
    for (int fy = 0; fy < g; ++fy)
        for (int fx = 0; fx < g; ++fx) {
            if (ref.mask.at2(fy * blk + blk / 2, fx * blk + blk / 2) == 0.0) continue;
            ++ndesc;
            auto desc = cell(re, fy, fx);
            Tensor m(Shape{g, g});
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; ++x) {
                    auto t = cell(te, y, x);
                    double dot = 0, nd = 0, nt = 0;
                    for (int c = 0; c < d; ++c) {
                        dot += desc[static_cast<size_t>(c)] * t[static_cast<size_t>(c)];
                        nd += desc[static_cast<size_t>(c)] * desc[static_cast<size_t>(c)];
                        nt += t[static_cast<size_t>(c)] * t[static_cast<size_t>(c)];
                    }
                    m.at2(y, x) = dot / std::max(std::sqrt(nd) * std::sqrt(nt), 1e-12);
                }
            double lo = m.data.minCoeff(), hi = m.data.maxCoeff();
            if (hi - lo > 1e-12)
                m.data = (m.data - lo) / (hi - lo);
            else
                m.data.setConstant(0.5);
            acc.data += m.data;
        }
    REQUIRE(ndesc >= 2);
    acc.data /= ndesc;
    CHECK((acc.data - conf.data.data).abs().maxCoeff() < 1e-6);
}

TEST_CASE("dense prompt projection maps the map to an embedding-shaped term") {
    ModelConfig cfg = tiny();
    Rng rng(7);
    DensePromptProj proj(cfg.embed_dim, rng);
    int g = cfg.grid_side();
    Tensor conf = Tensor::full({g, g}, 1.0);
    Tensor out = proj.fwd(conf)->v;
    REQUIRE(out.shape == Shape{cfg.embed_dim, g, g});
    // constant input: every spatial position receives the same projection
    for (int c = 0; c < cfg.embed_dim; ++c)
        for (int y = 0; y < g; ++y)
            for (int x = 0; x < g; ++x) CHECK(out.at3(c, y, x) == doctest::Approx(out.at3(c, 0, 0)));

    // zero map with zero weights leaves embeddings unchanged additively
    proj.proj.w->v.data.setZero();
    proj.proj.b->v.data.setZero();
    Tensor z = proj.fwd(Tensor::zeros({g, g}))->v;
    CHECK(z.data.abs().maxCoeff() == 0.0);
}

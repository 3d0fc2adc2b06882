#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "omnicd/checkpoint.hpp"
#include "omnicd/errors.hpp"
#include "omnicd/train.hpp"

using namespace omnicd;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.input_size = 32;
    c.patch_size = 16;
    c.embed_dim = 16;
    c.encoder_depth = 2;
    c.encoder_heads = 2;
    c.decoder_layers = 1;
    c.decoder_heads = 2;
    c.decoder_mlp_dim = 32;
    c.text_depth = 1;
    c.text_heads = 2;
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

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& leaf) {
    fs::path p = fs::temp_directory_path() / "omnicd_test" / leaf;
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("model forward produces the documented shapes, both prompt kinds") {
    ModelConfig cfg = tiny();
    Model model(cfg, 0);
    int s = cfg.input_size, g = cfg.grid_side();
    Tensor i1 = rand_image(s, 1), i2 = rand_image(s, 2);

    ModelOutputs out = model.forward(i1, i2, "Identify changes in buildings in the image.");
    CHECK(out.roi.data->v.shape == Shape{1, s, s});
    CHECK(out.raw_prob->v.shape == Shape{1, s, s});
    CHECK(out.filtered_prob->v.shape == Shape{1, s, s});
    CHECK(out.content1.data->v.shape == Shape{cfg.embed_dim, g, g});
    CHECK(out.style1.data->v.shape == Shape{cfg.embed_dim});
    CHECK(out.recon1->v.shape == Shape{3, s, s});
    CHECK(out.recon2->v.shape == Shape{3, s, s});
    for (const Var& v : {out.roi.data, out.raw_prob, out.filtered_prob, out.recon1, out.recon2}) {
        CHECK(v->v.all_finite());
        CHECK(v->v.data.minCoeff() >= 0.0);
        CHECK(v->v.data.maxCoeff() <= 1.0);
    }

    ConfidenceMap conf;
    conf.data = Tensor::full({g, g}, 0.5);
    ModelOutputs ref_out = model.forward(i1, i2, conf);
    CHECK(ref_out.filtered_prob->v.shape == Shape{1, s, s});
    CHECK(ref_out.filtered_prob->v.all_finite());
}

TEST_CASE("identically seeded models agree bitwise") {
    ModelConfig cfg = tiny();
    Model a(cfg, 7), b(cfg, 7), c(cfg, 8);
    NamedParams pa = a.named_params(), pb = b.named_params(), pc = c.named_params();
    REQUIRE(pa.size() == pb.size());
    bool all_eq = true, any_diff = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        all_eq = all_eq && (pa[i].second->v.data == pb[i].second->v.data).all();
        any_diff = any_diff || !(pa[i].second->v.data == pc[i].second->v.data).all();
    }
    CHECK(all_eq);
    CHECK(any_diff);  // a different seed must produce different weights
}

TEST_CASE("checkpoint round trip preserves config and every tensor") {
    ModelConfig cfg = tiny();
    Model model(cfg, 3);
    fs::path dir = scratch("ckpt");
    std::string path = (dir / "m.ckpt").string();
    save_checkpoint(model, path);

    Model loaded = load_checkpoint(path);
    CHECK(loaded.cfg.input_size == cfg.input_size);
    CHECK(loaded.cfg.embed_dim == cfg.embed_dim);
    CHECK(loaded.cfg.psp_bins == cfg.psp_bins);

    NamedParams a = model.named_params(), b = loaded.named_params();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        REQUIRE(a[i].second->v.shape == b[i].second->v.shape);
        CHECK((a[i].second->v.data == b[i].second->v.data).all());
    }

    // the reloaded model computes the same forward pass
    Tensor i1 = rand_image(cfg.input_size, 4), i2 = rand_image(cfg.input_size, 5);
    std::string prompt = "Identify changes in red squares in the image.";
    Tensor p0 = model.forward(i1, i2, prompt).filtered_prob->v;
    Tensor p1 = loaded.forward(i1, i2, prompt).filtered_prob->v;
    CHECK((p0.data == p1.data).all());
}

TEST_CASE("checkpoint loader rejects corrupt files") {
    fs::path dir = scratch("ckpt_bad");
    std::string bad = (dir / "bad.ckpt").string();
    {
        std::ofstream out(bad, std::ios::binary);
        out << "NOTOMNI1garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), DataError);

    // truncated payload: valid header, missing tensor bytes
    ModelConfig cfg = tiny();
    Model model(cfg, 0);
    std::string good = (dir / "good.ckpt").string();
    save_checkpoint(model, good);
    std::string bytes = slurp(good);
    std::string trunc = (dir / "trunc.ckpt").string();
    {
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(trunc), DataError);
}

TEST_CASE("adam minimizes a quadratic and skips grad-free parameters") {
    Var x = leaf(Tensor::full({1}, 5.0));
    Var frozen = leaf(Tensor::full({1}, 2.0));
    x->g = Tensor::zeros({1});
    NamedParams params = {{"x", x}, {"frozen", frozen}};
    Adam opt;
    opt.lr = 0.1;
    opt.init(params);
    for (int i = 0; i < 200; ++i) {
        x->g.data[0] = 2.0 * x->v.data[0];  // d/dx of x^2
        frozen->g.data.setZero();
        opt.step(params);
    }
    CHECK(std::abs(x->v.data[0]) < 0.1);
    CHECK(frozen->v.data[0] == 2.0);
    CHECK(opt.t == 200);
}

TEST_CASE("config json round trip and invariant checks") {
    ModelConfig cfg = tiny();
    cfg.lambdas = {0.2, 0.3, 0.4};
    ModelConfig back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.input_size == cfg.input_size);
    CHECK(back.patch_size == cfg.patch_size);
    CHECK(back.embed_dim == cfg.embed_dim);
    CHECK(back.encoder_depth == cfg.encoder_depth);
    CHECK(back.psp_bins == cfg.psp_bins);
    CHECK(back.lambdas == cfg.lambdas);
    CHECK(back.dropout == cfg.dropout);

    ModelConfig bad = tiny();
    bad.input_size = 30;  // not divisible by 8 or the patch size
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = tiny();
    bad.embed_dim = 15;  // not divisible by head count
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = tiny();
    bad.psp_bins = {1, 2, 6};  // bin exceeds the 4x4 grid
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("short training runs are reproducible and logged") {
    fs::path data = scratch("train_data");
    std::vector<SampleRecord> records = synth_generate(2, 11, 32, data.string());
    REQUIRE(records.size() == 2);

    auto run = [&](const std::string& leaf) {
        ModelConfig cfg = tiny();
        Model model(cfg, 21);
        TrainConfig tc;
        tc.steps = 3;
        tc.batch_size = 1;
        tc.lr = 1e-3;
        tc.seed = 5;
        tc.log_every = 1;
        tc.out_dir = scratch(leaf).string();
        return train_model(model, records, data.string(), tc);
    };
    TrainResult r1 = run("run_a");
    TrainResult r2 = run("run_b");
    CHECK(std::isfinite(r1.final_total));
    CHECK(slurp(r1.loss_csv_path) == slurp(r2.loss_csv_path));

    std::ifstream csv(r1.loss_csv_path);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "step,l_cd,l_sep,l_content,l_rec,total");
    int rows = 0;
    for (std::string line; std::getline(csv, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 3);

    // the written checkpoint reloads and evaluates
    Model loaded = load_checkpoint(r1.checkpoint_path);
    EvalResult ev = evaluate_model(loaded, records, data.string());
    CHECK(ev.overall.f1 >= 0.0);
    CHECK(ev.overall.f1 <= 1.0);
    CHECK(ev.counts.total() == 2LL * 32 * 32);
    CHECK(ev.per_sample_csv.rfind("id,precision,recall,f1,iou,acc", 0) == 0);
}

TEST_CASE("inference writes the three rasters") {
    fs::path data = scratch("infer_data");
    std::vector<SampleRecord> records = synth_generate(2, 13, 32, data.string());
    ModelConfig cfg = tiny();
    Model model(cfg, 1);
    BiTemporalSample s = load_sample(records[0], data.string());
    fs::path out = scratch("infer_out");
    infer_to_dir(model, s, out.string());
    for (const char* leaf : {"mask.png", "prob.png", "roi.png"})
        CHECK(fs::exists(out / leaf));
}

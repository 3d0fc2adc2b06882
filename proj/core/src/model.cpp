#include "omnicd/model.hpp"

#include "omnicd/errors.hpp"

namespace omnicd {

namespace {
Rng seeded(std::uint64_t seed, std::uint64_t salt) { return Rng(seed * 0x9e3779b97f4a7c15ULL + salt); }
}  // namespace

Model::Model(const ModelConfig& cfg_, std::uint64_t seed) : cfg(cfg_) {
    cfg.validate();
    Rng r0 = seeded(seed, 1);
    image_enc = ImageEncoder(cfg, r0);
    Rng r1 = seeded(seed, 2);
    text_enc = TextEncoder(cfg, r1);
    Rng r2 = seeded(seed, 3);
    guide = GuideDecoder(cfg, r2);
    Rng r3 = seeded(seed, 4);
    detector = Detector(cfg, r3);
    Rng r4 = seeded(seed, 5);
    style_enc = StyleEncoder(cfg.embed_dim, cfg.input_size, r4);
    Rng r5 = seeded(seed, 6);
    recon_dec = ReconDecoder(cfg, r5);
    Rng r6 = seeded(seed, 7);
    dense_proj = DensePromptProj(cfg.embed_dim, r6);
}

ModelOutputs Model::forward_impl(const Tensor& img1, const Tensor& img2,
                                 const PromptTokens& prompt, const ConfidenceMap* conf,
                                 bool training, Rng* drop_rng) const {
    Var x1 = constant(img1), x2 = constant(img2);
    ImageEmbedding emb1 = image_enc.encode(x1);
    ImageEmbedding emb2 = image_enc.encode(x2);

    ImageEmbedding g1 = emb1, g2 = emb2;
    if (conf) {
        Var add_term = dense_proj.fwd(conf->data);
        g1.data = add(emb1.data, add_term);
        g2.data = add(emb2.data, add_term);
    }
    ModelOutputs out;
    out.roi = guide.generate_roi(prompt, g1, g2, training, drop_rng);

    Var feat = change_features(emb1, emb2);
    auto [raw, filtered] = detector.detect(feat, out.roi);
    out.raw_prob = raw;
    out.filtered_prob = filtered;

    out.content1 = ContentFeature{emb1.data};
    out.content2 = ContentFeature{emb2.data};
    out.style1 = style_enc.encode(x1);
    out.style2 = style_enc.encode(x2);
    out.recon1 = recon_dec.reconstruct(out.content1, out.style1);
    out.recon2 = recon_dec.reconstruct(out.content2, out.style2);
    return out;
}

ModelOutputs Model::forward(const Tensor& img1, const Tensor& img2, const std::string& prompt,
                            bool training, Rng* drop_rng) const {
    auto [tokens, pooled] = text_enc.encode(prompt);
    (void)pooled;
    return forward_impl(img1, img2, tokens, nullptr, training, drop_rng);
}

ModelOutputs Model::forward(const Tensor& img1, const Tensor& img2, const ConfidenceMap& conf,
                            bool training, Rng* drop_rng) const {
    PromptTokens tokens = output_token_only(text_enc);
    return forward_impl(img1, img2, tokens, &conf, training, drop_rng);
}

NamedParams Model::named_params() const {
    NamedParams out;
    image_enc.params(out, "image_enc");
    text_enc.params(out, "text_enc");
    guide.params(out, "guide");
    detector.params(out, "detector");
    style_enc.params(out, "style_enc");
    recon_dec.params(out, "recon_dec");
    dense_proj.params(out, "dense_proj");
    return out;
}

}  // namespace omnicd

#include "omnicd/guide.hpp"

#include "omnicd/errors.hpp"

namespace omnicd {

GuideDecoder::GuideDecoder(const ModelConfig& c, Rng& rng) : cfg(c) {
    int d = c.embed_dim, cd = c.cross_dim(), h = c.decoder_heads;
    layers.resize(static_cast<size_t>(c.decoder_layers));
    for (auto& l : layers) {
        l.ln_self = LayerNorm(d);
        l.ln_t2i = LayerNorm(d);
        l.ln_mlp = LayerNorm(d);
        l.ln_i2t = LayerNorm(d);
        l.self_attn = MultiheadAttention(d, d, d, h, rng);
        l.t2i = MultiheadAttention(d, d, cd, h, rng);
        l.mlp = Mlp(d, c.decoder_mlp_dim, d, rng);
        l.i2t = MultiheadAttention(d, d, cd, h, rng);
    }
    ln_final = LayerNorm(d);
    final_attn = MultiheadAttention(d, d, cd, h, rng);
    up1 = ConvT2x2(d, d / 4, rng);
    up2 = ConvT2x2(d / 4, d / 8, rng);
    up_ln1 = LayerNorm(d / 4);
    up_ln2 = LayerNorm(d / 8);
    mlp1 = Linear(d, d, rng);
    mlp2 = Linear(d, d, rng);
    mlp3 = Linear(d, d / 8, rng);
    int g = c.grid_side();
    img_pos = sincos_pos2d(g, g, d);
}

DecoderState GuideDecoder::decoder_layer(const DecoderState& state, bool training,
                                         Rng* drop_rng) const {
    if (state.layer_index >= static_cast<int>(layers.size()))
        throw DataError("decoder_layer: layer_index past decoder depth");
    if (!state.tokens->v.all_finite() || !state.image->v.all_finite())
        throw NumericError("decoder_layer: non-finite input state");
    const Layer& l = layers[static_cast<size_t>(state.layer_index)];
    auto drop = [&](const Var& x) {
        return (training && drop_rng) ? dropout(x, cfg.dropout, drop_rng->g, true) : x;
    };
    Var pos = constant(img_pos);

    Var t = state.tokens, im = state.image;
    // 1. self-attention on prompt tokens
    {
        Var h = l.ln_self.fwd(t);
        t = add(t, drop(l.self_attn.fwd(h, h, h)));
    }
    // 2. cross-attention, tokens as queries; image keys carry positions
    {
        Var h = l.ln_t2i.fwd(t);
        Var key = add(im, pos);
        t = add(t, drop(l.t2i.fwd(h, key, im)));
    }
    // 3. point-wise MLP on tokens
    t = add(t, drop(l.mlp.fwd(l.ln_mlp.fwd(t))));
    // 4. cross-attention, image as queries
    {
        Var h = add(l.ln_i2t.fwd(im), pos);
        im = add(im, drop(l.i2t.fwd(h, t, t)));
    }
    if (!t->v.all_finite() || !im->v.all_finite())
        throw NumericError("decoder_layer: non-finite activation");
    DecoderState out;
    out.tokens = t;
    out.image = im;
    out.layer_index = state.layer_index + 1;
    return out;
}

Var GuideDecoder::mask_head(const DecoderState& state) const {
    int g = cfg.grid_side(), d = cfg.embed_dim, s = cfg.input_size;
    // one more token<->image attention at decoder resolution
    Var key = add(state.image, constant(img_pos));
    Var t = add(state.tokens, final_attn.fwd(ln_final.fwd(state.tokens), key, state.image));

    // 4x upsampling of the image embedding: GELU + LN between transposed convs
    Var grid = tokens_to_chw(state.image, g, g);
    grid = up_ln1.fwd_chw(gelu(up1.fwd(grid)));
    grid = up_ln2.fwd_chw(gelu(up2.fwd(grid)));  // [D/8, 4g, 4g] == S/2

    // output token -> per-channel weights for the upsampled embedding
    Var out_tok = slice_rows(t, 0, 1);
    Var w = mlp3.fwd(relu(mlp2.fwd(relu(mlp1.fwd(out_tok)))));  // [1, D/8]
    Var up_tokens = chw_to_tokens(grid);                        // [(4g)^2, D/8]
    Var logits = matmul(up_tokens, transpose(w));               // [(4g)^2, 1]
    Var map = reshape(logits, Shape{1, 4 * g, 4 * g});
    map = bilinear_resize(map, s, s);
    if (!map->v.all_finite()) throw NumericError("mask_head: non-finite logits");
    (void)d;
    return map;  // [1,S,S]
}

Var GuideDecoder::mask_logits(const PromptTokens& prompt, const ImageEmbedding& emb,
                              bool training, Rng* drop_rng) const {
    int g = cfg.grid_side();
    if (emb.data->v.dim(1) != g || emb.data->v.dim(2) != g)
        throw ShapeError("mask_logits: embedding grid does not match config");
    DecoderState st;
    st.tokens = prompt.tokens;
    st.image = chw_to_tokens(emb.data);
    st.layer_index = 0;
    for (size_t i = 0; i < layers.size(); ++i) st = decoder_layer(st, training, drop_rng);
    return mask_head(st);
}

ROIAttentionMap GuideDecoder::generate_roi(const PromptTokens& prompt, const ImageEmbedding& emb1,
                                           const ImageEmbedding& emb2, bool training,
                                           Rng* drop_rng) const {
    if (emb1.data->v.shape != emb2.data->v.shape)
        throw ShapeError("generate_roi: temporal embeddings differ in shape");
    Var m1 = sigmoid(mask_logits(prompt, emb1, training, drop_rng));
    Var m2 = sigmoid(mask_logits(prompt, emb2, training, drop_rng));
    ROIAttentionMap roi;
    roi.data = max_elem(m1, m2);
    return roi;
}

void GuideDecoder::params(NamedParams& out, const std::string& prefix) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        std::string p = prefix + ".layer" + std::to_string(i);
        layers[i].ln_self.params(out, p + ".ln_self");
        layers[i].ln_t2i.params(out, p + ".ln_t2i");
        layers[i].ln_mlp.params(out, p + ".ln_mlp");
        layers[i].ln_i2t.params(out, p + ".ln_i2t");
        layers[i].self_attn.params(out, p + ".self_attn");
        layers[i].t2i.params(out, p + ".t2i");
        layers[i].mlp.params(out, p + ".mlp");
        layers[i].i2t.params(out, p + ".i2t");
    }
    ln_final.params(out, prefix + ".ln_final");
    final_attn.params(out, prefix + ".final_attn");
    up1.params(out, prefix + ".up1");
    up2.params(out, prefix + ".up2");
    up_ln1.params(out, prefix + ".up_ln1");
    up_ln2.params(out, prefix + ".up_ln2");
    mlp1.params(out, prefix + ".mlp1");
    mlp2.params(out, prefix + ".mlp2");
    mlp3.params(out, prefix + ".mlp3");
}

}  // namespace omnicd

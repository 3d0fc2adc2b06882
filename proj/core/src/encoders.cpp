#include "omnicd/encoders.hpp"

#include <algorithm>
#include <cctype>

#include "omnicd/errors.hpp"

namespace omnicd {

Tokenizer::Tokenizer(const std::vector<std::string>& vocab) : vocab_(vocab) {
    for (size_t i = 0; i < vocab_.size(); ++i) index_[vocab_[i]] = static_cast<int>(i) + 2;
}

int Tokenizer::id_of(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? 1 : it->second;
}

std::vector<int> Tokenizer::tokenize(const std::string& text, int max_len) const {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
        } else if (std::ispunct(c)) {
            if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
            words.emplace_back(1, static_cast<char>(std::tolower(c)));
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    if (words.empty()) throw DataError("tokenize: empty text");
    if (static_cast<int>(words.size()) > max_len) words.resize(static_cast<size_t>(max_len));
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id_of(w));
    return ids;
}

// ---- image encoder ----

ImageEncoder::ImageEncoder(const ModelConfig& c, Rng& rng) : cfg(c) {
    int d = c.embed_dim;
    patch = Conv2d(3, d, c.patch_size, c.patch_size, 0, rng);
    int g = c.patch_grid();
    pos = sincos_pos2d(g, g, d);
    blocks.resize(static_cast<size_t>(c.encoder_depth));
    for (int i = 0; i < c.encoder_depth; ++i) {
        auto& b = blocks[static_cast<size_t>(i)];
        b.ln1 = LayerNorm(d);
        b.ln2 = LayerNorm(d);
        b.attn = MultiheadAttention(d, d, d, c.encoder_heads, rng);
        b.mlp = Mlp(d, 4 * d, d, rng);
        b.global = c.global_attention_every > 0 && (i + 1) % c.global_attention_every == 0;
    }
    up = ConvT2x2(d, d, rng);
    neck1 = Conv2d(d, d, 1, 1, 0, rng);
    neck2 = Conv2d(d, d, 3, 1, 1, rng);
    neck_ln1 = LayerNorm(d);
    neck_ln2 = LayerNorm(d);
}

namespace {
// window partition index lists for a g x g token grid
std::vector<std::vector<int>> window_indices(int g, int wsz) {
    std::vector<std::vector<int>> out;
    for (int wy = 0; wy < g; wy += wsz)
        for (int wx = 0; wx < g; wx += wsz) {
            std::vector<int> idx;
            idx.reserve(static_cast<size_t>(wsz) * wsz);
            for (int y = wy; y < wy + wsz; ++y)
                for (int x = wx; x < wx + wsz; ++x) idx.push_back(y * g + x);
            out.push_back(std::move(idx));
        }
    return out;
}
}  // namespace

ImageEmbedding ImageEncoder::encode(const Var& image) const {
    int s = cfg.input_size;
    if (image->v.ndim() != 3 || image->v.dim(0) != 3 || image->v.dim(1) != s ||
        image->v.dim(2) != s)
        throw ShapeError("encode_image: expected [3," + std::to_string(s) + "," +
                         std::to_string(s) + "], got " + shape_str(image->v.shape));
    if (!image->v.all_finite()) throw NumericError("encode_image: non-finite input");
    if (image->v.data.minCoeff() < -1e-9 || image->v.data.maxCoeff() > 1.0 + 1e-9)
        throw DataError("encode_image: pixel values outside [0,1]");

    int g = cfg.patch_grid(), d = cfg.embed_dim;
    Var x = chw_to_tokens(patch.fwd(image));  // [g*g, D]
    x = add(x, constant(pos));

    int wsz = std::min(cfg.window_size, g);
    bool windows_ok = g % wsz == 0;
    auto wins = windows_ok ? window_indices(g, wsz) : std::vector<std::vector<int>>{};

    for (const auto& b : blocks) {
        Var h = b.ln1.fwd(x);
        Var att;
        if (b.global || !windows_ok || wins.size() <= 1) {
            att = b.attn.fwd(h, h, h);
        } else {
            // windowed: run attention per window and scatter results back
            std::vector<Var> parts;
            parts.reserve(wins.size());
            for (const auto& idx : wins) {
                Var hw = embed_rows(h, idx);
                parts.push_back(b.attn.fwd(hw, hw, hw));
            }
            // inverse permutation of the window gather
            std::vector<int> inv(static_cast<size_t>(g) * g);
            int row = 0;
            for (const auto& idx : wins)
                for (int src : idx) inv[static_cast<size_t>(src)] = row++;
            att = embed_rows(concat_rows(parts), inv);
        }
        x = add(x, att);
        x = add(x, b.mlp.fwd(b.ln2.fwd(x)));
    }

    Var grid = tokens_to_chw(x, g, g);
    grid = up.fwd(grid);  // [D, 2g, 2g] == [D, S/8, S/8]
    grid = neck_ln1.fwd_chw(neck1.fwd(grid));
    grid = neck_ln2.fwd_chw(neck2.fwd(grid));
    if (!grid->v.all_finite()) throw NumericError("encode_image: non-finite embedding");
    return ImageEmbedding{grid, s};
}

void ImageEncoder::params(NamedParams& out, const std::string& prefix) const {
    patch.params(out, prefix + ".patch");
    for (size_t i = 0; i < blocks.size(); ++i) {
        std::string p = prefix + ".block" + std::to_string(i);
        blocks[i].ln1.params(out, p + ".ln1");
        blocks[i].ln2.params(out, p + ".ln2");
        blocks[i].attn.params(out, p + ".attn");
        blocks[i].mlp.params(out, p + ".mlp");
    }
    up.params(out, prefix + ".up");
    neck1.params(out, prefix + ".neck1");
    neck2.params(out, prefix + ".neck2");
    neck_ln1.params(out, prefix + ".neck_ln1");
    neck_ln2.params(out, prefix + ".neck_ln2");
}

// ---- text encoder ----

TextEncoder::TextEncoder(const ModelConfig& c, Rng& rng)
    : tok(c.vocab_or_default()), cfg(c) {
    int d = c.embed_dim;
    Tensor we(Shape{tok.vocab_size(), d});
    for (std::int64_t i = 0; i < we.numel(); ++i) we.data[i] = rng.normal(0.0, 0.02);
    word_emb = leaf(std::move(we));
    Tensor pe(Shape{c.text_max_len, d});
    for (std::int64_t i = 0; i < pe.numel(); ++i) pe.data[i] = rng.normal(0.0, 0.02);
    pos_emb = leaf(std::move(pe));
    blocks.resize(static_cast<size_t>(c.text_depth));
    for (auto& b : blocks) {
        b.attn = MultiheadAttention(d, d, d, c.text_heads, rng);
        b.mlp = Mlp(d, 4 * d, d, rng);
        b.ln1 = LayerNorm(d);
        b.ln2 = LayerNorm(d);
    }
    pool_proj = Linear(d, d, rng);
    token_proj = Linear(d, d, rng);
    Tensor ot(Shape{1, d});
    for (int i = 0; i < d; ++i) ot.data[i] = rng.normal(0.0, 0.02);
    output_token = leaf(std::move(ot));
}

Var TextEncoder::encode_tokens(const std::vector<int>& ids) const {
    int len = static_cast<int>(ids.size());
    Var x = embed_rows(word_emb, ids);
    x = add(x, slice_rows(pos_emb, 0, len));
    for (const auto& b : blocks) {
        x = b.ln1.fwd(add(x, b.attn.fwd(x, x, x)));
        x = b.ln2.fwd(add(x, b.mlp.fwd(x)));
    }
    return x;
}

std::pair<PromptTokens, Var> TextEncoder::encode(const std::string& text) const {
    auto ids = tok.tokenize(text, cfg.text_max_len);
    Var feats = encode_tokens(ids);  // [L,D]
    int len = feats->v.dim(0);
    // masked mean over real tokens (pads are never included in the sequence)
    Tensor ones(Shape{1, len});
    ones.data.setConstant(1.0 / len);
    Var pooled = pool_proj.fwd(matmul(constant(std::move(ones)), feats));  // [1,D]
    Var proj = token_proj.fwd(feats);
    if (len > 19) proj = slice_rows(proj, 0, 19);  // token_count <= 20 with the output token
    PromptTokens pt;
    pt.tokens = concat_rows({output_token, proj});
    pt.has_output_token = true;
    return {pt, pooled};
}

void TextEncoder::params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".word_emb", word_emb);
    out.emplace_back(prefix + ".pos_emb", pos_emb);
    for (size_t i = 0; i < blocks.size(); ++i) {
        std::string p = prefix + ".block" + std::to_string(i);
        blocks[i].attn.params(out, p + ".attn");
        blocks[i].mlp.params(out, p + ".mlp");
        blocks[i].ln1.params(out, p + ".ln1");
        blocks[i].ln2.params(out, p + ".ln2");
    }
    pool_proj.params(out, prefix + ".pool_proj");
    token_proj.params(out, prefix + ".token_proj");
    out.emplace_back(prefix + ".output_token", output_token);
}

PromptTokens output_token_only(const TextEncoder& enc) {
    PromptTokens pt;
    pt.tokens = enc.output_token;
    pt.has_output_token = true;
    return pt;
}

}  // namespace omnicd

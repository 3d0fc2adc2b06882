#include "omnicd/config.hpp"

#include <json.hpp>

#include "omnicd/errors.hpp"

namespace omnicd {

using nlohmann::json;

void ModelConfig::validate() const {
    if (input_size <= 0 || input_size % 8 != 0)
        throw DataError("config: input_size must be a positive multiple of 8");
    if (patch_size <= 0 || input_size % patch_size != 0)
        throw DataError("config: input_size must be divisible by patch_size");
    if (embed_dim <= 0 || embed_dim % decoder_heads != 0 || embed_dim % 2 != 0)
        throw DataError("config: embed_dim must be even and divisible by decoder_heads");
    if (embed_dim % encoder_heads != 0)
        throw DataError("config: embed_dim must be divisible by encoder_heads");
    if (embed_dim % 8 != 0)
        throw DataError("config: embed_dim must be divisible by 8 for the mask head");
    if (patch_grid() * 2 != grid_side())
        throw DataError("config: patch grid x2 must equal input_size/8");
    if (cross_dim() % decoder_heads != 0)
        throw DataError("config: cross-attention width must be divisible by decoder_heads");
    int prev = 0;
    for (int b : psp_bins) {
        if (b <= prev) throw DataError("config: psp_bins must be strictly increasing positive");
        if (b > grid_side()) throw DataError("config: psp bin exceeds embedding spatial size");
        prev = b;
    }
    if (psp_bins.empty()) throw DataError("config: psp_bins must be non-empty");
    if (text_max_len <= 0) throw DataError("config: text_max_len must be positive");
}

std::vector<std::string> ModelConfig::default_vocab() {
    return {"identify", "changes", "in",    "the",        "image",   ".",     "to",
            "and",      "red",     "blue",  "green",      "squares", "disks", "rectangles",
            "buildings", "water",  "bodies", "bare",      "land",    "landslide"};
}

std::vector<std::string> ModelConfig::vocab_or_default() const {
    return text_vocab.empty() ? default_vocab() : text_vocab;
}

std::string ModelConfig::to_json() const {
    json j;
    j["input_size"] = input_size;
    j["patch_size"] = patch_size;
    j["embed_dim"] = embed_dim;
    j["encoder_depth"] = encoder_depth;
    j["encoder_heads"] = encoder_heads;
    j["global_attention_every"] = global_attention_every;
    j["window_size"] = window_size;
    j["text_vocab"] = text_vocab;
    j["text_max_len"] = text_max_len;
    j["text_depth"] = text_depth;
    j["text_heads"] = text_heads;
    j["decoder_layers"] = decoder_layers;
    j["decoder_heads"] = decoder_heads;
    j["decoder_mlp_dim"] = decoder_mlp_dim;
    j["cross_attn_dim"] = cross_attn_dim;
    j["psp_bins"] = psp_bins;
    j["lambdas"] = lambdas;
    j["dropout"] = dropout;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("config: invalid JSON: ") + e.what());
    }
    ModelConfig c;
    auto get = [&](const char* k, auto& field) {
        if (j.contains(k)) field = j.at(k).template get<std::decay_t<decltype(field)>>();
    };
    get("input_size", c.input_size);
    get("patch_size", c.patch_size);
    get("embed_dim", c.embed_dim);
    get("encoder_depth", c.encoder_depth);
    get("encoder_heads", c.encoder_heads);
    get("global_attention_every", c.global_attention_every);
    get("window_size", c.window_size);
    get("text_vocab", c.text_vocab);
    get("text_max_len", c.text_max_len);
    get("text_depth", c.text_depth);
    get("text_heads", c.text_heads);
    get("decoder_layers", c.decoder_layers);
    get("decoder_heads", c.decoder_heads);
    get("decoder_mlp_dim", c.decoder_mlp_dim);
    get("cross_attn_dim", c.cross_attn_dim);
    get("psp_bins", c.psp_bins);
    get("dropout", c.dropout);
    if (j.contains("lambdas")) {
        auto v = j.at("lambdas").get<std::vector<double>>();
        if (v.size() != 3) throw DataError("config: lambdas must have 3 entries");
        c.lambdas = {v[0], v[1], v[2]};
    }
    c.validate();
    return c;
}

}  // namespace omnicd

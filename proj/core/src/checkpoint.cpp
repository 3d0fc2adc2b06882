#include "omnicd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "omnicd/errors.hpp"

using nlohmann::json;

namespace omnicd {

namespace {
constexpr char kMagic[8] = {'O', 'M', 'N', 'I', 'C', 'D', '0', '1'};
}

void save_checkpoint(const Model& model, const std::string& path) {
    NamedParams params = model.named_params();
    json dir = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, var] : params) {
        json e;
        e["name"] = name;
        e["shape"] = var->v.shape;
        e["offset"] = offset;
        dir.push_back(e);
        offset += static_cast<std::uint64_t>(var->v.numel()) * sizeof(double);
    }
    json header;
    header["config"] = json::parse(model.cfg.to_json());
    header["tensors"] = dir;
    std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_checkpoint: cannot open " + path);
    f.write(kMagic, sizeof(kMagic));
    std::uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, var] : params)
        f.write(reinterpret_cast<const char*>(var->v.data.data()),
                static_cast<std::streamsize>(var->v.numel() * sizeof(double)));
    if (!f) throw DataError("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("load_checkpoint: bad magic in " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen == 0 || hlen > (64u << 20))
        throw DataError("load_checkpoint: bad header length in " + path);
    std::string htext(hlen, '\0');
    f.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw DataError("load_checkpoint: truncated header in " + path);
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("load_checkpoint: header parse error: ") + e.what());
    }

    ModelConfig cfg = ModelConfig::from_json(header.at("config").dump());
    Model model(cfg, 0);
    NamedParams params = model.named_params();

    std::map<std::string, std::pair<Shape, std::uint64_t>> dir;
    for (const auto& e : header.at("tensors"))
        dir[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(),
                                                e.at("offset").get<std::uint64_t>()};
    std::streampos base = f.tellg();
    for (auto& [name, var] : params) {
        auto it = dir.find(name);
        if (it == dir.end()) throw DataError("load_checkpoint: missing tensor " + name);
        if (it->second.first != var->v.shape)
            throw DataError("load_checkpoint: shape mismatch for " + name);
        f.seekg(base + static_cast<std::streamoff>(it->second.second));
        f.read(reinterpret_cast<char*>(var->v.data.data()),
               static_cast<std::streamsize>(var->v.numel() * sizeof(double)));
        if (!f) throw DataError("load_checkpoint: truncated data for " + name);
    }
    return model;
}

}  // namespace omnicd

#include "crnl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace crnl {

static constexpr char kMagic[6] = {'C', 'R', 'N', 'L', '1', '\n'};

void save_checkpoint(const std::string& path, const nlohmann::json& model_meta, int64_t step,
                     const std::string& config_hash, const ParamList& params) {
    nlohmann::json manifest;
    manifest["model"] = model_meta;
    manifest["step"] = step;
    manifest["config_hash"] = config_hash;
    nlohmann::json meta = nlohmann::json::array();
    for (const auto& p : params)
        meta.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    manifest["params"] = std::move(meta);
    std::string m = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_checkpoint: cannot open " + path);
    f.write(kMagic, sizeof(kMagic));
    uint64_t len = m.size();
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xFF);
    f.write(reinterpret_cast<const char*>(lenb), 8);
    f.write(m.data(), m.size());
    std::vector<float> buf;
    for (const auto& p : params) {
        const auto& v = p.tensor.vec();
        buf.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) buf[i] = static_cast<float>(v[i]);
        f.write(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
    }
    if (!f) throw IoError("save_checkpoint: short write to " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, kMagic, 6) != 0)
        throw IoError("load_checkpoint: " + path + " is not a CRNL1 checkpoint");
    unsigned char lenb[8];
    f.read(reinterpret_cast<char*>(lenb), 8);
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(lenb[i]) << (8 * i);
    std::string m(len, '\0');
    f.read(m.data(), len);
    if (!f) throw IoError("load_checkpoint: truncated manifest in " + path);

    CheckpointData ckpt;
    ckpt.manifest = nlohmann::json::parse(m);
    for (const auto& meta : ckpt.manifest.at("params")) {
        int64_t n = 1;
        for (int64_t d : meta.at("shape").get<std::vector<int64_t>>()) n *= d;
        std::vector<float> blob(n);
        f.read(reinterpret_cast<char*>(blob.data()), n * sizeof(float));
        if (!f) throw IoError("load_checkpoint: truncated blob in " + path);
        ckpt.blobs.emplace_back(meta.at("name").get<std::string>(), std::move(blob));
    }
    return ckpt;
}

void apply_checkpoint(const CheckpointData& ckpt, const ParamList& params) {
    std::map<std::string, const std::vector<float>*> by_name;
    for (const auto& [name, blob] : ckpt.blobs) by_name[name] = &blob;
    for (const auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw IoError("apply_checkpoint: checkpoint has no parameter '" + p.name + "'");
        if (static_cast<int64_t>(it->second->size()) != p.tensor.numel())
            throw IoError("apply_checkpoint: size mismatch for '" + p.name + "'");
        auto& dst = const_cast<Tensor&>(p.tensor).vec();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>((*it->second)[i]);
    }
}

}  // namespace crnl

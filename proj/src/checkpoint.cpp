// SPDX-License-Identifier: Apache-2.0
#include "cmseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cmseg/errors.hpp"

namespace cmseg {

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::ordered_json index = nlohmann::ordered_json::array();
    for (const auto& [name, tensor] : ckpt.params)
        index.push_back(nlohmann::ordered_json{{"name", name}, {"dims", tensor.dims}});

    nlohmann::ordered_json header{{"format_version", kCheckpointVersion},
                                  {"phase", ckpt.meta.phase},
                                  {"seed", ckpt.meta.seed},
                                  {"step", ckpt.meta.step},
                                  {"config_hash", ckpt.meta.config_hash},
                                  {"extra", ckpt.meta.extra},
                                  {"tensors", index}};
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot create checkpoint file " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t hlen = header_str.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : ckpt.params) {
        (void)name;
        out.write(reinterpret_cast<const char*>(tensor.v.data()),
                  static_cast<std::streamsize>(tensor.v.size() * sizeof(double)));
    }
    if (!out) throw RuntimeError("short write to checkpoint file " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint file " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ValidationError("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kCheckpointVersion)
        throw ValidationError("unsupported checkpoint format version in " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || hlen > (std::uint64_t(1) << 30)) throw ValidationError("corrupt checkpoint header in " + path);
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ValidationError("truncated checkpoint header in " + path);

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(header_str);
    } catch (const std::exception& e) {
        throw ValidationError("corrupt checkpoint header in " + path + ": " + e.what());
    }

    Checkpoint ckpt;
    ckpt.meta.phase = header.at("phase").get<std::string>();
    ckpt.meta.seed = header.at("seed").get<std::uint64_t>();
    ckpt.meta.step = header.at("step").get<std::int64_t>();
    ckpt.meta.config_hash = header.at("config_hash").get<std::string>();
    ckpt.meta.extra = header.at("extra");
    for (const auto& entry : header.at("tensors")) {
        Tensor t(entry.at("dims").get<std::vector<Index>>());
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!in) throw ValidationError("truncated tensor data in " + path);
        ckpt.params.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
    return ckpt;
}

ParamMap extract_group(const ParamMap& params, const std::string& prefix) {
    ParamMap out;
    for (const auto& [name, tensor] : params)
        if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), tensor);
    return out;
}

void insert_group(ParamMap& dst, const std::string& prefix, const ParamMap& src) {
    for (const auto& [name, tensor] : src) dst.emplace(prefix + name, tensor);
}

}  // namespace cmseg

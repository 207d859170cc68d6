// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_CHECKPOINT_HPP
#define CMSEG_CHECKPOINT_HPP

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "cmseg/nets.hpp"

namespace cmseg {

// Container file: 8-byte magic, u32 format version, u64 JSON header length,
// JSON header (metadata + tensor index), then raw little-endian float64 data
// in index order. Keys are sorted, so identical state gives identical bytes.
inline constexpr char kCheckpointMagic[8] = {'C', 'M', 'S', 'E', 'G', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::string phase;  // "cmft" or "cmff"
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    std::string config_hash;
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct Checkpoint {
    CheckpointMeta meta;
    ParamMap params;  // layer-id-derived names; optimizer state under "opt/"
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Sub-map view helpers: group prefixes like "g_ab/" separate the networks
// stored in one checkpoint.
ParamMap extract_group(const ParamMap& params, const std::string& prefix);
void insert_group(ParamMap& dst, const std::string& prefix, const ParamMap& src);

}  // namespace cmseg

#endif

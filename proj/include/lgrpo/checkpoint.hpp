// SPDX-License-Identifier: Apache-2.0
//
// Plain-text checkpoints. Every real is written with 17 significant digits,
// so a save/load round trip is exact.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "lgrpo/policy.hpp"

namespace lgrpo {

struct Checkpoint {
    std::string stage;      // "warmup" or "train"
    std::string algorithm;  // empty for warmup
    std::uint64_t step = 0;  // last completed step
    std::string config_hash;
    PolicyParams policy;
    std::optional<PolicyParams> reference;
    OptimizerState optimizer;
    std::map<std::string, std::string> meta;
};

// Writes to a temporary file and renames it into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lgrpo

// SPDX-License-Identifier: Apache-2.0
//
// Run configuration in INI form. Unknown sections or keys are errors, and a
// missing required key is reported together with every other missing key.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgrpo/policy.hpp"
#include "lgrpo/trainer.hpp"
#include "lgrpo/warmup.hpp"

namespace lgrpo {

struct SweepConfig {
    // Variant names: an algorithm, optionally followed by "-<ablation>".
    std::vector<std::string> variants{"latent_grpo"};
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct RunConfig {
    std::string name;
    std::uint64_t seed = 0;
    ModelConfig model;
    WarmupConfig warmup;
    RlConfig rl;
    std::string algorithm = "latent_grpo";
    std::vector<std::string> ablations;
    std::string warmup_checkpoint;  // path used by train when no --init is given
    SweepConfig sweep;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical INI text of every resolved value.
std::string to_ini(const RunConfig& config);

// FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

// Splits "latent_grpo-one_sided" into its algorithm and ablation list.
struct Variant {
    Algorithm algorithm = Algorithm::latent_grpo;
    std::vector<std::string> ablations;
};
Variant parse_variant(const std::string& name);

AlgorithmSwitches switches_for(const RunConfig& config);

}  // namespace lgrpo

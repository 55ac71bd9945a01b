// SPDX-License-Identifier: Apache-2.0
//
// Supervised warmup that gives the policy a usable latent reasoning mode
// before RL. Stage 1 fits explicit chains with cross-entropy. Stage 2 feeds
// latent tokens, built from the model's own top-K distribution, at the chain
// positions and fits the marker, answer and EOS that follow.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lgrpo/policy.hpp"
#include "lgrpo/task_env.hpp"

namespace lgrpo {

struct WarmupConfig {
    std::size_t corpus_size = 2000;
    int difficulty_min = 1;
    int difficulty_max = 2;
    std::size_t stage1_epochs = 4;
    std::size_t stage2_epochs = 4;
    std::size_t batch_size = 32;
    double learning_rate = 3e-3;
    // Weight of the chain-value cross-entropy at latent positions in stage 2.
    double chain_weight = 1.0;
    // Two-sided Gumbel scale used when building stage-2 latent tokens.
    double noise_scale = 0.0;
    double gate_threshold = 0.6;
    int gate_difficulty = 1;
    std::size_t gate_size = 200;
};

void validate(const WarmupConfig& config);

struct WarmupEpoch {
    int stage = 1;
    std::size_t epoch = 0;
    double loss = 0.0;
};

struct WarmupReport {
    std::vector<WarmupEpoch> epochs;
    double explicit_pass_at_1 = 0.0;  // after stage 1, explicit_greedy decoding
    double gate_pass_at_1 = 0.0;      // after stage 2, latent_deterministic decoding
    double marker_rate = 0.0;
    double mean_length = 0.0;
    bool gate_passed = false;

    std::string to_json_line() const;
};

using WarmupProgress = std::function<void(const WarmupEpoch&)>;

// Mean cross-entropy of one explicit example: prompt, then every response
// token predicted from its prefix.
double explicit_example_loss(const PolicyParams& params, const WarmupExample& ex, std::span<double> grads);

// Stage-2 loss of one example. `grads` may be empty to skip the backward pass.
double latent_example_loss(const PolicyParams& params, const WarmupExample& ex, const LatentSettings& latent,
                           double chain_weight, Rng& rng, std::span<double> grads);

// Runs both stages from a fresh initialisation and evaluates the gate.
PolicyParams run_warmup(const ModelConfig& model, const WarmupConfig& config, std::span<const WarmupExample> corpus,
                        std::span<const TaskInstance> gate_tasks, const RolloutLimits& limits,
                        const LatentSettings& latent, std::uint64_t seed, WarmupReport& report,
                        const WarmupProgress& progress = {});

}  // namespace lgrpo

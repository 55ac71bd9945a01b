// SPDX-License-Identifier: Apache-2.0
//
// Held-out evaluation: deterministic pass@1, sampled pass@k with the unbiased
// combinatorial estimator, and mean response length #L.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lgrpo/policy.hpp"
#include "lgrpo/task_env.hpp"

namespace lgrpo {

// 1 − C(n−c, k)/C(n, k). Throws unless 1 ≤ k ≤ n and c ≤ n.
double pass_at_k(std::size_t n, std::size_t c, std::size_t k);

// 1, 2, 4, … up to n, with n itself always last.
std::vector<std::size_t> k_curve(std::size_t n);

struct EvalOptions {
    RolloutMode mode = RolloutMode::latent_deterministic;
    std::size_t n = 1;  // samples per prompt
    std::vector<std::size_t> ks{1};
    RolloutLimits limits;
    LatentSettings latent;
    std::uint64_t seed = 0;
    bool parallel = true;
    bool keep_trajectories = false;
};

struct PromptOutcome {
    std::uint64_t task_seed = 0;
    bool greedy_correct = false;
    std::size_t greedy_length = 0;
    std::size_t samples_correct = 0;
};

struct EvalReport {
    std::string mode;
    std::size_t prompts = 0;
    std::size_t n = 0;
    double pass_at_1 = 0.0;  // deterministic decoding
    std::vector<std::size_t> ks;
    std::vector<double> pass_at_k;  // from the n samples per prompt
    double mean_length = 0.0;      // #L over deterministic decodes
    double marker_rate = 0.0;      // deterministic decodes whose explicit part opens with the marker
    double terminated_rate = 0.0;
    std::vector<PromptOutcome> per_prompt;
    std::vector<Trajectory> greedy_trajectories;
    std::vector<std::vector<Trajectory>> sampled_trajectories;

    std::string to_json_line(bool with_prompts = false) const;
};

// Deterministic counterpart used for pass@1: latent modes decode with
// latent_deterministic, explicit modes with explicit_greedy.
RolloutMode deterministic_counterpart(RolloutMode mode) noexcept;

// Reward of a finished trajectory against its task.
double score_trajectory(const Trajectory& traj, const TaskInstance& task);

EvalReport evaluate(const PolicyParams& params, std::span<const TaskInstance> tasks, const EvalOptions& options);

}  // namespace lgrpo

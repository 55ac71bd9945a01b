// SPDX-License-Identifier: Apache-2.0
//
// The RL loop shared by Latent-GRPO and its baselines. Each algorithm is a
// preset over three switches (one-sided noise, invalid-sample masking,
// first-step path selection) plus a rollout mode.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lgrpo/evaluate.hpp"
#include "lgrpo/objective.hpp"
#include "lgrpo/policy.hpp"
#include "lgrpo/task_env.hpp"

namespace lgrpo {

enum class Algorithm { latent_grpo, soft_grpo, explicit_grpo };

const char* to_string(Algorithm a) noexcept;
// Throws a config error listing the valid names.
Algorithm parse_algorithm(const std::string& name);
const std::vector<std::string>& algorithm_names();

struct AlgorithmSwitches {
    RolloutMode rollout_mode = RolloutMode::latent_one_sided;
    bool invalid_mask = true;
    bool first_token_selection = true;
};

AlgorithmSwitches preset(Algorithm a);

// Turns one switch off: "one_sided" (falls back to two-sided noise),
// "invalid_mask" or "first_token_selection".
void apply_ablation(AlgorithmSwitches& switches, const std::string& name);
const std::vector<std::string>& ablation_names();

struct RlConfig {
    std::size_t group_size = 8;
    LossConfig loss;
    std::size_t ppo_epochs = 2;
    std::size_t batch_size = 16;
    OptimizerConfig optimizer;
    std::size_t total_steps = 100;
    std::size_t eval_interval = 10;
    std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint
    RolloutLimits limits;
    LatentSettings latent;
    int train_difficulty_min = 2;
    int train_difficulty_max = 2;
    int modulus = 10;
    int eval_difficulty = 2;
    std::size_t eval_size = 100;
    std::uint64_t eval_seed = 7;
    std::uint64_t seed = 0;
};

void validate(const RlConfig& config);

struct StepMetrics {
    std::uint64_t step = 0;
    double mean_reward = 0.0;
    double valid_fraction = 0.0;
    std::optional<double> pass_at_1;
    std::optional<double> eval_mean_length;
    double mean_length = 0.0;  // training rollouts
    double mean_kl = 0.0;
    double mean_ratio = 0.0;
    double max_ratio = 0.0;
    double clipped_fraction = 0.0;
    std::size_t masked_first_tokens = 0;
    double loss = 0.0;
    bool skipped = false;
    double grad_norm = 0.0;
    std::size_t flipped_components = 0;
    std::size_t misaligned_components = 0;
    std::size_t positive_components = 0;

    std::string to_json_line(const std::string& run_id) const;
};

struct TrainState {
    PolicyParams policy;
    PolicyParams reference;  // π_ref, fixed when RL starts
    OptimizerState optimizer;
    std::uint64_t next_step = 0;
    std::size_t consecutive_skips = 0;
};

TrainState start_training(const PolicyParams& initial);

// Prompts for one RL step.
std::vector<TaskInstance> step_tasks(const RlConfig& config, std::uint64_t step);

// Rollouts, rewards, advantages and (when β > 0) reference log-probs for one step.
std::vector<RolloutGroup> collect_batch(const PolicyParams& rollout_params, const PolicyParams* reference,
                                        std::span<const TaskInstance> tasks, std::uint64_t step,
                                        const RlConfig& config, const AlgorithmSwitches& switches);

struct TrainHooks {
    std::function<void(const StepMetrics&)> on_step;
    // Called after a completed step with the updated state.
    std::function<void(const TrainState&)> on_checkpoint;
    // Called once when the final step completes, with a held-out evaluation
    // of the trained policy.
    std::function<void(const TrainState&, const EvalReport&)> on_final;
};

// Evaluation on the held-out set with deterministic decoding.
EvalReport held_out_eval(const PolicyParams& params, const RlConfig& config, RolloutMode mode);

// Held-out pass@1 is measured before the update of every step that is a
// multiple of eval_interval, so step 0 reports the starting policy.
// Runs steps state.next_step … min(config.total_steps, stop_after) − 1.
// Throws Error(gate_failure) after three consecutive skipped steps.
void train(TrainState& state, const RlConfig& config, const AlgorithmSwitches& switches, const TrainHooks& hooks,
           std::optional<std::uint64_t> stop_after = std::nullopt);

}  // namespace lgrpo

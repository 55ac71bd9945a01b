// SPDX-License-Identifier: Apache-2.0
//
// The clipped group-relative objective over a batch of rollout groups, with
// per-step surrogate ratios and a per-step KL penalty against a frozen
// reference policy.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lgrpo/advantage.hpp"
#include "lgrpo/autodiff.hpp"
#include "lgrpo/policy.hpp"

namespace lgrpo {

// min(r·A, clip(r, 1−ε, 1+ε)·A).
double clipped_term(double ratio, double advantage, double clip_eps);

// Differentiable form. The clipped branch is taken only when it is strictly
// smaller, so at the boundary the gradient still flows through r.
ad::Value clipped_term(const ad::Value& ratio, double advantage, double clip_eps);

// exp(current − rollout).
double step_ratio(double current_log, double rollout_log);

struct RolloutGroup {
    std::vector<Trajectory> trajectories;
    AdvantageTable advantages;
    // Per trajectory, L×V reference log-probs; empty when the KL term is off.
    std::vector<std::vector<double>> reference_log_probs;
};

struct LossConfig {
    double clip_eps = 0.2;
    double kl_coeff = 0.01;
};

void validate(const LossConfig& config);

struct LossStats {
    std::size_t trajectories = 0;
    std::size_t steps = 0;
    double mean_kl = 0.0;
    double mean_ratio = 0.0;
    double max_ratio = 0.0;
    double clipped_fraction = 0.0;
    // Latent components whose current margin is negative.
    std::size_t flipped_components = 0;
    // Latent components of positive-advantage steps whose direct score is negative.
    std::size_t misaligned_components = 0;
    std::size_t positive_components = 0;
};

struct LossResult {
    double loss = 0.0;       // −(1/N) Σ_j objective_j
    double objective_sum = 0.0;  // Σ_j objective_j
    std::vector<double> grads;  // ∂loss/∂θ, empty unless requested
    LossStats stats;
};

// Reference log-probs for every step of a trajectory (L×V, row-major).
std::vector<double> reference_log_probs(const PolicyParams& reference, const Trajectory& traj);

// Fills group.reference_log_probs from `reference`.
void attach_reference(RolloutGroup& group, const PolicyParams& reference);

struct LossOptions {
    bool compute_gradients = true;
    // Evaluate trajectories concurrently; the reduction order is fixed either way.
    bool parallel = true;
};

// Loss for minimisation: the negated mean over every trajectory in the batch
// of (1/L_j) Σ_t [clipped_term(r_t, Ã_{j,t}) − β·KL_t]. Throws on an empty batch.
LossResult latent_grpo_loss(std::span<const RolloutGroup> batch, const PolicyParams& params,
                            const LossConfig& config, const LossOptions& options = {});

// One trajectory's objective (1/L) Σ_t [...] recorded on `tape`.
struct TrajectoryObjective {
    ad::Value value;
    ReplayEval replay;
    LossStats stats;
    double kl_sum = 0.0;
    double ratio_sum = 0.0;
    std::size_t clipped_steps = 0;
};

TrajectoryObjective trajectory_objective(const PolicyParams& params, const Trajectory& traj,
                                         std::span<const double> advantages,
                                         std::span<const double> reference_log_probs, const LossConfig& config,
                                         ad::Tape& tape, bool requires_grad);

}  // namespace lgrpo

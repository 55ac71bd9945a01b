// SPDX-License-Identifier: Apache-2.0
//
// Group-relative advantages with invalid-sample masking, trajectory scoring,
// and first-step masking of all but one correct path.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace lgrpo {

struct GroupOutcome {
    std::vector<double> rewards;
    std::vector<std::size_t> lengths;
    std::vector<bool> terminated;
    std::vector<bool> correct;
    std::vector<double> traj_scores;

    std::size_t size() const noexcept { return rewards.size(); }
};

struct AdvantageTable {
    std::vector<double> base;                // per trajectory
    std::vector<std::vector<int>> mask;      // G × T_max, 0/1
    std::vector<std::vector<double>> masked;  // G × T_max
    std::optional<std::size_t> selected_path;
    double group_mean = 0.0;
    double group_std = 0.0;

    std::size_t masked_first_tokens() const;
};

// σ below this is treated as zero.
constexpr double kStdFloor = 1e-8;

// Trajectories that stopped on their own strictly before l_max.
std::vector<std::size_t> valid_set(const GroupOutcome& outcome, std::size_t l_max);

struct GroupStats {
    double mean = 0.0;
    double std = 0.0;
};

// (R_j − μ)/σ over the members of `valid` (population σ); zero elsewhere and
// everywhere when `valid` is empty or σ < kStdFloor.
std::vector<double> masked_group_advantages(const GroupOutcome& outcome, std::span<const std::size_t> valid,
                                            GroupStats* stats = nullptr);

// Mean of per-step rollout log quantities. Throws on an empty trajectory.
double trajectory_score(std::span<const double> per_step_logs);

// Highest score among the correct set (ties to the lowest index); nullopt
// when fewer than two trajectories are correct.
std::optional<std::size_t> select_optimal_path(std::span<const std::size_t> correct_set,
                                               std::span<const double> scores);

std::vector<std::vector<int>> first_token_mask(std::size_t group_size, std::size_t t_max,
                                               std::span<const std::size_t> correct_set,
                                               std::optional<std::size_t> selected);

std::vector<std::vector<double>> masked_advantage(std::span<const double> base,
                                                  const std::vector<std::vector<int>>& mask);

struct AdvantageSwitches {
    bool invalid_mask = true;
    bool first_token_selection = true;
};

// The full per-group pipeline. With invalid_mask off every trajectory counts
// as valid for the statistics; with selection off the mask is all ones.
AdvantageTable compute_advantages(const GroupOutcome& outcome, std::size_t l_max, std::size_t t_max,
                                  const AdvantageSwitches& switches);

}  // namespace lgrpo

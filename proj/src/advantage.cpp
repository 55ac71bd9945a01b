// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/advantage.hpp"

#include <cmath>
#include <numeric>

#include "lgrpo/error.hpp"

namespace lgrpo {

std::size_t AdvantageTable::masked_first_tokens() const {
    std::size_t n = 0;
    for (const auto& row : mask) {
        if (!row.empty() && row[0] == 0) ++n;
    }
    return n;
}

std::vector<std::size_t> valid_set(const GroupOutcome& outcome, std::size_t l_max) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < outcome.size(); ++j) {
        if (outcome.terminated[j] && outcome.lengths[j] < l_max) {
            out.push_back(j);
        }
    }
    return out;
}

std::vector<double> masked_group_advantages(const GroupOutcome& outcome, std::span<const std::size_t> valid,
                                            GroupStats* stats) {
    std::vector<double> adv(outcome.size(), 0.0);
    GroupStats s;
    if (!valid.empty()) {
        double total = 0.0;
        for (std::size_t j : valid) total += outcome.rewards[j];
        s.mean = total / static_cast<double>(valid.size());
        double sq = 0.0;
        for (std::size_t j : valid) {
            const double d = outcome.rewards[j] - s.mean;
            sq += d * d;
        }
        s.std = std::sqrt(sq / static_cast<double>(valid.size()));
        if (s.std >= kStdFloor) {
            for (std::size_t j : valid) {
                adv[j] = (outcome.rewards[j] - s.mean) / s.std;
            }
        }
    }
    if (stats != nullptr) {
        *stats = s;
    }
    return adv;
}

double trajectory_score(std::span<const double> per_step_logs) {
    if (per_step_logs.empty()) {
        throw Error(ErrorKind::invalid_argument, "trajectory score of an empty trajectory");
    }
    const double total = std::accumulate(per_step_logs.begin(), per_step_logs.end(), 0.0);
    return total / static_cast<double>(per_step_logs.size());
}

std::optional<std::size_t> select_optimal_path(std::span<const std::size_t> correct_set,
                                               std::span<const double> scores) {
    if (correct_set.size() <= 1) {
        return std::nullopt;
    }
    std::optional<std::size_t> best;
    for (std::size_t j : correct_set) {
        if (!best || scores[j] > scores[*best] || (scores[j] == scores[*best] && j < *best)) {
            best = j;
        }
    }
    return best;
}

std::vector<std::vector<int>> first_token_mask(std::size_t group_size, std::size_t t_max,
                                               std::span<const std::size_t> correct_set,
                                               std::optional<std::size_t> selected) {
    std::vector<std::vector<int>> mask(group_size, std::vector<int>(t_max, 1));
    if (!selected || t_max == 0) {
        return mask;
    }
    for (std::size_t j : correct_set) {
        if (j != *selected) {
            mask[j][0] = 0;
        }
    }
    return mask;
}

std::vector<std::vector<double>> masked_advantage(std::span<const double> base,
                                                  const std::vector<std::vector<int>>& mask) {
    if (mask.size() != base.size()) {
        throw Error(ErrorKind::shape_mismatch, "advantage mask rows differ from group size");
    }
    std::vector<std::vector<double>> out(base.size());
    for (std::size_t j = 0; j < base.size(); ++j) {
        out[j].resize(mask[j].size());
        for (std::size_t t = 0; t < mask[j].size(); ++t) {
            out[j][t] = static_cast<double>(mask[j][t]) * base[j];
        }
    }
    return out;
}

AdvantageTable compute_advantages(const GroupOutcome& outcome, std::size_t l_max, std::size_t t_max,
                                  const AdvantageSwitches& switches) {
    const std::size_t g = outcome.size();
    std::vector<std::size_t> valid;
    if (switches.invalid_mask) {
        valid = valid_set(outcome, l_max);
    } else {
        valid.resize(g);
        std::iota(valid.begin(), valid.end(), std::size_t{0});
    }

    AdvantageTable table;
    GroupStats stats;
    table.base = masked_group_advantages(outcome, valid, &stats);
    table.group_mean = stats.mean;
    table.group_std = stats.std;

    std::vector<std::size_t> correct;
    for (std::size_t j = 0; j < g; ++j) {
        if (outcome.correct[j]) correct.push_back(j);
    }
    if (switches.first_token_selection) {
        table.selected_path = select_optimal_path(correct, outcome.traj_scores);
    }
    table.mask = first_token_mask(g, t_max, correct, table.selected_path);
    table.masked = masked_advantage(table.base, table.mask);
    return table;
}

}  // namespace lgrpo

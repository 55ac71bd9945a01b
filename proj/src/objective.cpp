// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "lgrpo/error.hpp"
#include "lgrpo/surrogate.hpp"

namespace lgrpo {

double clipped_term(double ratio, double advantage, double clip_eps) {
    const double unclipped = ratio * advantage;
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    return std::min(unclipped, clipped);
}

ad::Value clipped_term(const ad::Value& ratio, double advantage, double clip_eps) {
    ad::Tape& tape = *ratio.tape();
    const ad::Value a = tape.scalar(advantage);
    const ad::Value unclipped = ratio * a;
    const ad::Value clipped = ad::clip_value(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * a;
    std::vector<bool> take_unclipped(ratio.size());
    for (std::size_t i = 0; i < take_unclipped.size(); ++i) {
        take_unclipped[i] = !(clipped.data()[i] < unclipped.data()[i]);
    }
    return ad::select(take_unclipped, unclipped, clipped);
}

double step_ratio(double current_log, double rollout_log) { return std::exp(current_log - rollout_log); }

void validate(const LossConfig& config) {
    if (!(config.clip_eps > 0.0 && config.clip_eps < 1.0)) {
        throw Error(ErrorKind::config, "clip_eps must lie in (0, 1)");
    }
    if (!(config.kl_coeff >= 0.0)) {
        throw Error(ErrorKind::config, "kl_coeff must be non-negative");
    }
}

std::vector<double> reference_log_probs(const PolicyParams& reference, const Trajectory& traj) {
    ad::Tape tape;
    const ReplayEval eval = teacher_forced_eval(reference, traj, tape, false);
    const auto data = eval.log_probs.data();
    return {data.begin(), data.end()};
}

void attach_reference(RolloutGroup& group, const PolicyParams& reference) {
    group.reference_log_probs.clear();
    for (const Trajectory& traj : group.trajectories) {
        group.reference_log_probs.push_back(reference_log_probs(reference, traj));
    }
}

TrajectoryObjective trajectory_objective(const PolicyParams& params, const Trajectory& traj,
                                         std::span<const double> advantages,
                                         std::span<const double> reference_log_probs, const LossConfig& config,
                                         ad::Tape& tape, bool requires_grad) {
    const std::size_t L = traj.length();
    const std::size_t V = params.config().vocab;
    if (advantages.size() < L) {
        throw Error(ErrorKind::misalignment, "advantage row shorter than the trajectory");
    }
    const bool with_kl = !reference_log_probs.empty();
    if (with_kl && reference_log_probs.size() != L * V) {
        throw Error(ErrorKind::misalignment, "reference log-probs do not cover every step");
    }

    TrajectoryObjective out;
    out.replay = teacher_forced_eval(params, traj, tape, requires_grad);
    const auto log_probs = out.replay.log_probs.data();

    std::vector<ad::Value> terms;
    terms.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
        const ad::Value ratio =
            ad::exp(out.replay.step_log[t] - tape.scalar(traj.per_step_rollout_logs[t]));
        const double r = ratio.item();
        const double adv = advantages[t];
        ad::Value term = clipped_term(ratio, adv, config.clip_eps);
        if (term.item() != r * adv) ++out.clipped_steps;
        out.ratio_sum += r;
        out.stats.max_ratio = std::max(out.stats.max_ratio, r);

        if (with_kl) {
            const ad::Value kl =
                categorical_kl_rows(ad::row_of(out.replay.log_probs, t), reference_log_probs.subspan(t * V, V));
            out.kl_sum += kl.item();
            if (config.kl_coeff != 0.0) term = term - ad::scale(kl, config.kl_coeff);
        }
        terms.push_back(term);

        if (t < traj.t_lat()) {
            const LatentStep& step = traj.latent_steps[t];
            const auto& ids = step.token.source.token_ids;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const double delta = step.record.targets[i] - log_probs[t * V + static_cast<std::size_t>(ids[i])];
                if (delta < 0.0) ++out.stats.flipped_components;
                if (adv > 0.0) {
                    ++out.stats.positive_components;
                    const double h = step.record.mode == NoiseMode::one_sided ? one_sided_score(delta)
                                                                              : two_sided_score(delta);
                    if (h < 0.0) ++out.stats.misaligned_components;
                }
            }
        }
    }
    out.stats.trajectories = 1;
    out.stats.steps = L;
    out.value = ad::scale(ad::sum(ad::concat_rows(terms)), 1.0 / static_cast<double>(L));
    return out;
}

namespace {

struct Item {
    const Trajectory* traj;
    std::span<const double> advantages;
    std::span<const double> reference;
};

bool carries_signal(const Item& item, double kl_coeff) {
    if (kl_coeff != 0.0 && !item.reference.empty()) return true;
    const std::size_t L = item.traj->length();
    return std::any_of(item.advantages.begin(), item.advantages.begin() + static_cast<std::ptrdiff_t>(L),
                       [](double a) { return a != 0.0; });
}

}  // namespace

LossResult latent_grpo_loss(std::span<const RolloutGroup> batch, const PolicyParams& params,
                            const LossConfig& config, const LossOptions& options) {
    validate(config);
    std::vector<Item> items;
    for (const RolloutGroup& group : batch) {
        if (group.advantages.masked.size() != group.trajectories.size()) {
            throw Error(ErrorKind::misalignment, "advantage table does not match group size");
        }
        const bool with_ref = !group.reference_log_probs.empty();
        if (with_ref && group.reference_log_probs.size() != group.trajectories.size()) {
            throw Error(ErrorKind::misalignment, "reference log-probs do not match group size");
        }
        for (std::size_t j = 0; j < group.trajectories.size(); ++j) {
            items.push_back({&group.trajectories[j], group.advantages.masked[j],
                             with_ref ? std::span<const double>(group.reference_log_probs[j])
                                      : std::span<const double>()});
        }
    }
    if (items.empty()) {
        throw Error(ErrorKind::invalid_argument, "loss over an empty batch");
    }

    const std::size_t n = items.size();
    const std::size_t p = params.size();
    std::vector<double> objective(n, 0.0);
    std::vector<LossStats> stats(n);
    std::vector<double> kl(n, 0.0);
    std::vector<double> ratio(n, 0.0);
    std::vector<std::size_t> clipped(n, 0);
    std::vector<std::vector<double>> grads(options.compute_gradients ? n : 0);
    std::vector<std::exception_ptr> failures(n);

    const auto run = [&](std::size_t i) {
        try {
            if (!carries_signal(items[i], config.kl_coeff)) return;
            ad::Tape tape;
            TrajectoryObjective obj = trajectory_objective(params, *items[i].traj, items[i].advantages,
                                                           items[i].reference, config, tape,
                                                           options.compute_gradients);
            objective[i] = obj.value.item();
            stats[i] = obj.stats;
            kl[i] = obj.kl_sum;
            ratio[i] = obj.ratio_sum;
            clipped[i] = obj.clipped_steps;
            if (options.compute_gradients) {
                tape.backward(obj.value);
                grads[i].assign(p, 0.0);
                accumulate_gradients(params, obj.replay.leaves, grads[i]);
            }
        } catch (...) {
            failures[i] = std::current_exception();
        }
    };

    const auto count = static_cast<std::ptrdiff_t>(n);
    if (options.parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < count; ++i) run(static_cast<std::size_t>(i));
    } else {
        for (std::ptrdiff_t i = 0; i < count; ++i) run(static_cast<std::size_t>(i));
    }
    for (const auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }

    LossResult result;
    const double inv_n = 1.0 / static_cast<double>(n);
    double kl_total = 0.0;
    double ratio_total = 0.0;
    std::size_t clipped_total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        result.objective_sum += objective[i];
        LossStats& s = result.stats;
        s.trajectories += stats[i].trajectories;
        s.steps += stats[i].steps;
        s.max_ratio = std::max(s.max_ratio, stats[i].max_ratio);
        s.flipped_components += stats[i].flipped_components;
        s.misaligned_components += stats[i].misaligned_components;
        s.positive_components += stats[i].positive_components;
        kl_total += kl[i];
        ratio_total += ratio[i];
        clipped_total += clipped[i];
    }
    result.loss = -result.objective_sum * inv_n;
    if (result.stats.steps > 0) {
        const double steps = static_cast<double>(result.stats.steps);
        result.stats.mean_kl = kl_total / steps;
        result.stats.mean_ratio = ratio_total / steps;
        result.stats.clipped_fraction = static_cast<double>(clipped_total) / steps;
    }
    if (options.compute_gradients) {
        result.grads.assign(p, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (grads[i].empty()) continue;
            for (std::size_t k = 0; k < p; ++k) result.grads[k] += grads[i][k];
        }
        for (double& g : result.grads) g *= -inv_n;
    }
    return result;
}

}  // namespace lgrpo

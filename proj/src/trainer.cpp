// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/trainer.hpp"

#include <cmath>
#include <exception>
#include <nlohmann/json.hpp>

#include "lgrpo/advantage.hpp"
#include "lgrpo/error.hpp"

namespace lgrpo {

const char* to_string(Algorithm a) noexcept {
    switch (a) {
        case Algorithm::latent_grpo: return "latent_grpo";
        case Algorithm::soft_grpo: return "soft_grpo";
        case Algorithm::explicit_grpo: return "explicit_grpo";
    }
    return "unknown";
}

const std::vector<std::string>& algorithm_names() {
    static const std::vector<std::string> names{"latent_grpo", "soft_grpo", "explicit_grpo"};
    return names;
}

const std::vector<std::string>& ablation_names() {
    static const std::vector<std::string> names{"one_sided", "invalid_mask", "first_token_selection"};
    return names;
}

namespace {

std::string joined(const std::vector<std::string>& items) {
    std::string s;
    for (const auto& n : items) s += (s.empty() ? "" : ", ") + n;
    return s;
}

}  // namespace

Algorithm parse_algorithm(const std::string& name) {
    if (name == "latent_grpo") return Algorithm::latent_grpo;
    if (name == "soft_grpo") return Algorithm::soft_grpo;
    if (name == "explicit_grpo") return Algorithm::explicit_grpo;
    throw Error(ErrorKind::config, "unknown algorithm '" + name + "'; valid choices: " + joined(algorithm_names()));
}

AlgorithmSwitches preset(Algorithm a) {
    switch (a) {
        case Algorithm::latent_grpo: return {RolloutMode::latent_one_sided, true, true};
        case Algorithm::soft_grpo: return {RolloutMode::latent_two_sided, false, false};
        case Algorithm::explicit_grpo: return {RolloutMode::explicit_sampled, false, false};
    }
    return {};
}

void apply_ablation(AlgorithmSwitches& switches, const std::string& name) {
    if (name == "one_sided") {
        if (switches.rollout_mode == RolloutMode::latent_one_sided) {
            switches.rollout_mode = RolloutMode::latent_two_sided;
        }
    } else if (name == "invalid_mask") {
        switches.invalid_mask = false;
    } else if (name == "first_token_selection") {
        switches.first_token_selection = false;
    } else {
        throw Error(ErrorKind::config, "unknown ablation '" + name + "'; valid choices: " + joined(ablation_names()));
    }
}

void validate(const RlConfig& c) {
    validate(c.loss);
    validate(c.latent.noise);
    if (c.group_size < 2) throw Error(ErrorKind::config, "rl.group_size must be at least 2");
    if (c.ppo_epochs == 0) throw Error(ErrorKind::config, "rl.ppo_epochs must be positive");
    if (c.batch_size == 0) throw Error(ErrorKind::config, "rl.batch_size must be positive");
    if (c.eval_interval == 0) throw Error(ErrorKind::config, "rl.eval_interval must be positive");
    if (c.eval_size == 0) throw Error(ErrorKind::config, "task.eval_size must be positive");
    if (c.limits.l_max == 0) throw Error(ErrorKind::config, "latent.l_max must be positive");
    if (!(c.optimizer.learning_rate > 0.0)) throw Error(ErrorKind::config, "rl.learning_rate must be positive");
    if (c.train_difficulty_min < 1 || c.train_difficulty_max < c.train_difficulty_min) {
        throw Error(ErrorKind::config, "task train difficulty range is empty");
    }
    if (c.eval_difficulty < 1) throw Error(ErrorKind::config, "task.eval_difficulty must be at least 1");
}

std::string StepMetrics::to_json_line(const std::string& run_id) const {
    nlohmann::json j;
    j["run_id"] = run_id;
    j["step"] = step;
    j["mean_reward"] = mean_reward;
    j["valid_fraction"] = valid_fraction;
    j["pass_at_1"] = pass_at_1 ? nlohmann::json(*pass_at_1) : nlohmann::json(nullptr);
    j["eval_mean_length"] = eval_mean_length ? nlohmann::json(*eval_mean_length) : nlohmann::json(nullptr);
    j["mean_length"] = mean_length;
    j["mean_kl"] = mean_kl;
    j["mean_ratio"] = mean_ratio;
    j["max_ratio"] = max_ratio;
    j["clipped_fraction"] = clipped_fraction;
    j["masked_first_tokens"] = masked_first_tokens;
    j["loss"] = std::isfinite(loss) ? nlohmann::json(loss) : nlohmann::json(nullptr);
    j["skipped"] = skipped;
    j["grad_norm"] = grad_norm;
    j["flipped_components"] = flipped_components;
    j["misaligned_components"] = misaligned_components;
    j["positive_components"] = positive_components;
    return j.dump();
}

TrainState start_training(const PolicyParams& initial) {
    TrainState s;
    s.policy = initial;
    s.reference = initial;
    return s;
}

std::vector<TaskInstance> step_tasks(const RlConfig& config, std::uint64_t step) {
    const auto span = static_cast<std::uint64_t>(config.train_difficulty_max - config.train_difficulty_min + 1);
    std::vector<TaskInstance> tasks;
    tasks.reserve(config.batch_size);
    for (std::size_t b = 0; b < config.batch_size; ++b) {
        const std::uint64_t index = step * config.batch_size + b;
        const int difficulty = config.train_difficulty_min + static_cast<int>(index % span);
        tasks.push_back(generate_task(task_seed(config.seed, index, Split::train), difficulty, config.modulus));
    }
    return tasks;
}

std::vector<RolloutGroup> collect_batch(const PolicyParams& rollout_params, const PolicyParams* reference,
                                        std::span<const TaskInstance> tasks, std::uint64_t step,
                                        const RlConfig& config, const AlgorithmSwitches& switches) {
    const std::size_t B = tasks.size();
    const std::size_t G = config.group_size;
    std::vector<RolloutGroup> groups(B);
    for (auto& g : groups) g.trajectories.resize(G);
    std::vector<std::exception_ptr> failures(B * G);

#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(B * G); ++i) {
        const auto u = static_cast<std::size_t>(i);
        const std::size_t b = u / G;
        const std::size_t j = u % G;
        try {
            Rng rng(derive_seed(config.seed, {step, b, j}));
            Trajectory t = rollout(rollout_params, tasks[b].prompt_tokens, switches.rollout_mode, config.limits,
                                   config.latent, rng);
            t.reward = score_trajectory(t, tasks[b]);
            groups[b].trajectories[j] = std::move(t);
        } catch (...) {
            failures[u] = std::current_exception();
        }
    }
    for (const auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }

    const bool with_ref = reference != nullptr && config.loss.kl_coeff != 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        RolloutGroup& group = groups[b];
        GroupOutcome outcome;
        for (const Trajectory& t : group.trajectories) {
            outcome.rewards.push_back(t.reward);
            outcome.lengths.push_back(t.length());
            outcome.terminated.push_back(t.terminated);
            outcome.correct.push_back(t.reward > 0.5);
            outcome.traj_scores.push_back(trajectory_score(t.per_step_rollout_logs));
        }
        group.advantages = compute_advantages(outcome, config.limits.l_max, config.limits.l_max,
                                              {switches.invalid_mask, switches.first_token_selection});
    }
    if (with_ref) {
        std::vector<std::exception_ptr> ref_failures(B * G);
        for (auto& g : groups) g.reference_log_probs.resize(G);
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(B * G); ++i) {
            const auto u = static_cast<std::size_t>(i);
            try {
                groups[u / G].reference_log_probs[u % G] =
                    reference_log_probs(*reference, groups[u / G].trajectories[u % G]);
            } catch (...) {
                ref_failures[u] = std::current_exception();
            }
        }
        for (const auto& f : ref_failures) {
            if (f) std::rethrow_exception(f);
        }
    }
    return groups;
}

EvalReport held_out_eval(const PolicyParams& params, const RlConfig& config, RolloutMode mode) {
    const std::vector<TaskInstance> tasks =
        make_eval_set(config.eval_size, config.eval_difficulty, config.eval_seed, config.modulus);
    EvalOptions opts;
    opts.mode = deterministic_counterpart(mode);
    opts.limits = config.limits;
    opts.latent = config.latent;
    opts.seed = config.eval_seed;
    return evaluate(params, tasks, opts);
}

void train(TrainState& state, const RlConfig& config, const AlgorithmSwitches& switches, const TrainHooks& hooks,
           std::optional<std::uint64_t> stop_after) {
    validate(config);
    const std::uint64_t end =
        stop_after ? std::min<std::uint64_t>(config.total_steps, *stop_after) : config.total_steps;
    const PolicyParams* reference = config.loss.kl_coeff != 0.0 ? &state.reference : nullptr;

    while (state.next_step < end) {
        const std::uint64_t step = state.next_step;
        StepMetrics m;
        m.step = step;
        if (step % config.eval_interval == 0) {
            const EvalReport r = held_out_eval(state.policy, config, switches.rollout_mode);
            m.pass_at_1 = r.pass_at_1;
            m.eval_mean_length = r.mean_length;
        }

        const FrozenParams old = snapshot(state.policy);
        const std::vector<TaskInstance> tasks = step_tasks(config, step);
        const std::vector<RolloutGroup> batch = collect_batch(*old, reference, tasks, step, config, switches);

        double reward = 0.0;
        double length = 0.0;
        std::size_t valid = 0;
        std::size_t total = 0;
        for (const RolloutGroup& g : batch) {
            m.masked_first_tokens += g.advantages.masked_first_tokens();
            for (const Trajectory& t : g.trajectories) {
                reward += t.reward;
                length += static_cast<double>(t.length());
                if (t.terminated && t.length() < config.limits.l_max) ++valid;
                ++total;
            }
        }
        m.mean_reward = reward / static_cast<double>(total);
        m.mean_length = length / static_cast<double>(total);
        m.valid_fraction = static_cast<double>(valid) / static_cast<double>(total);

        for (std::size_t epoch = 0; epoch < config.ppo_epochs; ++epoch) {
            const LossResult res = latent_grpo_loss(batch, state.policy, config.loss);
            m.loss = res.loss;
            m.mean_kl = res.stats.mean_kl;
            m.mean_ratio = res.stats.mean_ratio;
            m.max_ratio = res.stats.max_ratio;
            m.clipped_fraction = res.stats.clipped_fraction;
            m.flipped_components = res.stats.flipped_components;
            m.misaligned_components = res.stats.misaligned_components;
            m.positive_components = res.stats.positive_components;
            if (!std::isfinite(res.loss)) {
                m.skipped = true;
                break;
            }
            m.grad_norm = l2_norm(res.grads);
            if (!optimizer_step(state.policy, res.grads, config.optimizer, state.optimizer)) {
                m.skipped = true;
                break;
            }
        }

        state.consecutive_skips = m.skipped ? state.consecutive_skips + 1 : 0;
        state.next_step = step + 1;
        if (hooks.on_step) hooks.on_step(m);
        if (state.consecutive_skips >= 3) {
            throw Error(ErrorKind::gate_failure, "three consecutive steps skipped on non-finite loss or gradient "
                                                 "(last at step " + std::to_string(step) + ")");
        }
        const bool last = state.next_step == end;
        const bool periodic = config.checkpoint_interval > 0 && state.next_step % config.checkpoint_interval == 0;
        if (hooks.on_checkpoint && (last || periodic)) hooks.on_checkpoint(state);
    }
    if (state.next_step == config.total_steps && hooks.on_final) {
        hooks.on_final(state, held_out_eval(state.policy, config, switches.rollout_mode));
    }
}

}  // namespace lgrpo

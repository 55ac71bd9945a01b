// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/evaluate.hpp"

#include <exception>
#include <nlohmann/json.hpp>

#include "lgrpo/error.hpp"

namespace lgrpo {

double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
    if (k < 1 || k > n) {
        throw Error(ErrorKind::invalid_argument,
                    "pass@k needs 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    }
    if (c > n) {
        throw Error(ErrorKind::invalid_argument, "more correct samples than samples");
    }
    if (n - c < k) return 1.0;
    // C(n−c, k)/C(n, k) = Π_{i=n−c+1}^{n} (1 − k/i)
    double miss = 1.0;
    for (std::size_t i = n - c + 1; i <= n; ++i) {
        miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
    }
    return 1.0 - miss;
}

std::vector<std::size_t> k_curve(std::size_t n) {
    if (n == 0) throw Error(ErrorKind::invalid_argument, "k curve needs n >= 1");
    std::vector<std::size_t> ks;
    for (std::size_t k = 1; k < n; k *= 2) ks.push_back(k);
    ks.push_back(n);
    return ks;
}

RolloutMode deterministic_counterpart(RolloutMode mode) noexcept {
    return is_latent(mode) ? RolloutMode::latent_deterministic : RolloutMode::explicit_greedy;
}

double score_trajectory(const Trajectory& traj, const TaskInstance& task) {
    return verify(extract_answer(traj.explicit_steps), task);
}

EvalReport evaluate(const PolicyParams& params, std::span<const TaskInstance> tasks, const EvalOptions& options) {
    if (tasks.empty()) throw Error(ErrorKind::invalid_argument, "evaluation needs at least one prompt");
    if (options.n == 0) throw Error(ErrorKind::invalid_argument, "evaluation needs n >= 1");
    for (std::size_t k : options.ks) {
        if (k < 1 || k > options.n) {
            throw Error(ErrorKind::invalid_argument,
                        "k=" + std::to_string(k) + " outside [1, n=" + std::to_string(options.n) + "]");
        }
    }

    const std::size_t m = tasks.size();
    std::vector<Trajectory> greedy(m);
    std::vector<std::vector<Trajectory>> sampled(m);
    std::vector<PromptOutcome> outcomes(m);
    std::vector<std::exception_ptr> failures(m);
    const RolloutMode det_mode = deterministic_counterpart(options.mode);

    const auto run = [&](std::size_t i) {
        try {
            const TaskInstance& task = tasks[i];
            PromptOutcome& o = outcomes[i];
            o.task_seed = task.seed;
            Rng det_rng(derive_seed(options.seed, {i, 0xde7}));
            greedy[i] = rollout(params, task.prompt_tokens, det_mode, options.limits, options.latent, det_rng);
            o.greedy_correct = score_trajectory(greedy[i], task) > 0.5;
            o.greedy_length = greedy[i].length();
            sampled[i].reserve(options.n);
            if (options.mode == det_mode) {
                // Deterministic decoding repeats itself; no need to roll out again.
                o.samples_correct = o.greedy_correct ? options.n : 0;
                if (options.keep_trajectories) sampled[i].assign(options.n, greedy[i]);
                return;
            }
            for (std::size_t s = 0; s < options.n; ++s) {
                Rng rng(derive_seed(options.seed, {i, s}));
                Trajectory t = rollout(params, task.prompt_tokens, options.mode, options.limits, options.latent, rng);
                if (score_trajectory(t, task) > 0.5) ++o.samples_correct;
                sampled[i].push_back(std::move(t));
            }
        } catch (...) {
            failures[i] = std::current_exception();
        }
    };
    const auto count = static_cast<std::ptrdiff_t>(m);
    if (options.parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < count; ++i) run(static_cast<std::size_t>(i));
    } else {
        for (std::ptrdiff_t i = 0; i < count; ++i) run(static_cast<std::size_t>(i));
    }
    for (const auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }

    EvalReport report;
    report.mode = to_string(options.mode);
    report.prompts = m;
    report.n = options.n;
    report.ks = options.ks;
    report.pass_at_k.assign(options.ks.size(), 0.0);
    double correct = 0.0;
    double length = 0.0;
    double marker = 0.0;
    double terminated = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const PromptOutcome& o = outcomes[i];
        correct += o.greedy_correct ? 1.0 : 0.0;
        length += static_cast<double>(o.greedy_length);
        const Trajectory& g = greedy[i];
        if (!g.explicit_steps.empty() && g.explicit_steps.front() == tok::end_latent) marker += 1.0;
        if (g.terminated) terminated += 1.0;
        for (std::size_t q = 0; q < options.ks.size(); ++q) {
            report.pass_at_k[q] += pass_at_k(options.n, o.samples_correct, options.ks[q]);
        }
    }
    const double dm = static_cast<double>(m);
    report.pass_at_1 = correct / dm;
    report.mean_length = length / dm;
    report.marker_rate = marker / dm;
    report.terminated_rate = terminated / dm;
    for (double& v : report.pass_at_k) v /= dm;
    report.per_prompt = std::move(outcomes);
    if (options.keep_trajectories) {
        report.greedy_trajectories = std::move(greedy);
        report.sampled_trajectories = std::move(sampled);
    }
    return report;
}

std::string EvalReport::to_json_line(bool with_prompts) const {
    nlohmann::json j;
    j["mode"] = mode;
    j["prompts"] = prompts;
    j["n"] = n;
    j["pass_at_1"] = pass_at_1;
    nlohmann::json curve = nlohmann::json::array();
    for (std::size_t q = 0; q < ks.size(); ++q) {
        curve.push_back({{"k", ks[q]}, {"pass_at_k", pass_at_k[q]}});
    }
    j["pass_at_k"] = curve;
    j["mean_length"] = mean_length;
    j["marker_rate"] = marker_rate;
    j["terminated_rate"] = terminated_rate;
    if (with_prompts) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& o : per_prompt) {
            rows.push_back({{"task_seed", o.task_seed},
                            {"greedy_correct", o.greedy_correct},
                            {"greedy_length", o.greedy_length},
                            {"samples_correct", o.samples_correct}});
        }
        j["per_prompt"] = rows;
    }
    return j.dump();
}

}  // namespace lgrpo

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "lgrpo/error.hpp"
#include "lgrpo/kernels.hpp"
#include "lgrpo/policy.hpp"
#include "lgrpo/surrogate.hpp"
#include "lgrpo/task_env.hpp"

namespace lgrpo {

const char* to_string(RolloutMode mode) noexcept {
    switch (mode) {
        case RolloutMode::latent_deterministic: return "latent_deterministic";
        case RolloutMode::latent_one_sided: return "latent_one_sided";
        case RolloutMode::latent_two_sided: return "latent_two_sided";
        case RolloutMode::latent_sampled_inference: return "latent_sampled_inference";
        case RolloutMode::explicit_sampled: return "explicit_sampled";
        case RolloutMode::explicit_greedy: return "explicit_greedy";
    }
    return "unknown";
}

NoiseMode noise_mode_for(RolloutMode mode) noexcept {
    switch (mode) {
        case RolloutMode::latent_one_sided: return NoiseMode::one_sided;
        case RolloutMode::latent_two_sided:
        case RolloutMode::latent_sampled_inference: return NoiseMode::two_sided;
        default: return NoiseMode::none;
    }
}

bool is_latent(RolloutMode mode) noexcept {
    return mode != RolloutMode::explicit_sampled && mode != RolloutMode::explicit_greedy;
}

std::vector<InputElement> Trajectory::replay_inputs() const {
    std::vector<InputElement> inputs(prompt.begin(), prompt.end());
    const std::size_t steps = length();
    for (std::size_t t = 0; t + 1 < steps; ++t) {
        if (t < latent_steps.size()) {
            inputs.emplace_back(latent_steps[t].token.embedding);
        } else {
            inputs.emplace_back(explicit_steps[t - latent_steps.size()]);
        }
    }
    return inputs;
}

namespace {

struct NextStep {
    std::vector<double> probs;
    std::vector<double> log_probs;
};

NextStep next_distribution(const PolicyParams& params, std::span<const InputElement> prefix) {
    const std::vector<double> logits = forward(params, prefix);
    NextStep s;
    s.probs.resize(logits.size());
    s.log_probs.resize(logits.size());
    kernels::softmax_rows(logits, s.probs, 1, logits.size());
    kernels::log_softmax_rows(logits, s.log_probs, 1, logits.size());
    return s;
}

int argmax(std::span<const double> v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

int sample_categorical(std::span<const double> probs, Rng& rng) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    // Rounding left the cumulative sum just below u: take the last non-zero entry.
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) return static_cast<int>(i);
    }
    return 0;
}

double latent_log(const PerturbationRecord& record) {
    ad::Tape tape;
    const ad::Value current = tape.row(record.rollout_log_probs);
    return latent_step_log_likelihood(record, current).item();
}

}  // namespace

Trajectory rollout(const PolicyParams& params, std::span<const int> prompt, RolloutMode mode,
                   const RolloutLimits& limits, const LatentSettings& latent, Rng& rng) {
    if (prompt.empty()) {
        throw Error(ErrorKind::invalid_argument, "rollout needs a non-empty prompt");
    }
    if (limits.l_max == 0) {
        throw Error(ErrorKind::config, "l_max must be positive");
    }
    if (prompt.size() + limits.l_max - 1 > params.config().max_positions) {
        throw Error(ErrorKind::config, "prompt plus l_max exceeds the model's max_positions");
    }
    const EmbeddingView table = params.embeddings();

    Trajectory traj;
    traj.prompt.assign(prompt.begin(), prompt.end());
    std::vector<InputElement> prefix(prompt.begin(), prompt.end());

    if (is_latent(mode)) {
        validate(latent.noise);
        const NoiseMode noise = noise_mode_for(mode);
        while (traj.t_lat() < limits.t_lat_max && traj.length() < limits.l_max) {
            const NextStep next = next_distribution(params, prefix);
            if (argmax(next.probs) == tok::end_latent) {
                break;
            }
            LatentStep step;
            step.token.source = top_k_slice(next.probs, latent.k, tok::end_latent);
            TopKSlice& slice = step.token.source;
            // Use the same log-softmax values that replay recomputes.
            for (std::size_t i = 0; i < slice.size(); ++i) {
                slice.full_log_probs[i] = next.log_probs[static_cast<std::size_t>(slice.token_ids[i])];
            }
            step.record = make_perturbation_record(slice.full_log_probs, noise, latent.noise, rng);
            step.token.weights =
                noisy_mixture_weights(slice.log_probs, step.record.applied_perturbation(), latent.noise.tau);
            step.token.embedding = mix_embeddings(slice, step.token.weights, table);

            traj.per_step_rollout_logs.push_back(latent_log(step.record));
            prefix.emplace_back(step.token.embedding);
            traj.latent_steps.push_back(std::move(step));
        }
    }

    const bool sample = mode == RolloutMode::explicit_sampled;
    while (traj.length() < limits.l_max) {
        const NextStep next = next_distribution(params, prefix);
        const int token = sample ? sample_categorical(next.probs, rng) : argmax(next.probs);
        traj.per_step_rollout_logs.push_back(next.log_probs[static_cast<std::size_t>(token)]);
        traj.explicit_steps.push_back(token);
        prefix.emplace_back(token);
        if (token == tok::eos) {
            traj.terminated = true;
            break;
        }
    }
    return traj;
}

ReplayEval teacher_forced_eval(const PolicyParams& params, const Trajectory& traj, ad::Tape& tape,
                               bool requires_grad) {
    const std::size_t L = traj.length();
    if (L == 0) {
        throw Error(ErrorKind::misalignment, "cannot replay an empty trajectory");
    }
    if (traj.per_step_rollout_logs.size() != L) {
        throw Error(ErrorKind::misalignment, "trajectory has " + std::to_string(L) + " steps but " +
                                                 std::to_string(traj.per_step_rollout_logs.size()) +
                                                 " rollout log entries");
    }
    const std::size_t V = params.config().vocab;
    const std::size_t P = traj.prompt.size();
    const std::vector<InputElement> inputs = traj.replay_inputs();

    ReplayEval out;
    out.leaves = bind_params(params, tape, requires_grad);
    SequenceOutput seq = forward_sequence(params, out.leaves, inputs);
    out.latent_inputs = std::move(seq.latent_inputs);

    std::vector<std::size_t> idx(L * V);
    for (std::size_t k = 0; k < L * V; ++k) idx[k] = (P - 1) * V + k;
    out.log_probs = ad::log_softmax(ad::gather(seq.logits, std::move(idx), {L, V}));

    out.step_log.reserve(L);
    for (std::size_t t = 0; t < L; ++t) {
        if (t < traj.t_lat()) {
            const LatentStep& step = traj.latent_steps[t];
            const auto& ids = step.token.source.token_ids;
            if (ids.size() != step.record.size()) {
                throw Error(ErrorKind::misalignment, "latent step " + std::to_string(t) +
                                                         ": record width differs from top-K slice");
            }
            std::vector<std::size_t> cols(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i) cols[i] = t * V + static_cast<std::size_t>(ids[i]);
            const ad::Value current = ad::gather(out.log_probs, std::move(cols), {1, ids.size()});
            out.step_log.push_back(latent_step_log_likelihood(step.record, current));
        } else {
            const int token = traj.explicit_steps[t - traj.t_lat()];
            if (token < 0 || static_cast<std::size_t>(token) >= V) {
                throw Error(ErrorKind::misalignment, "explicit step holds an out-of-vocabulary token");
            }
            out.step_log.push_back(
                ad::gather(out.log_probs, {t * V + static_cast<std::size_t>(token)}, {1, 1}));
        }
    }
    return out;
}

}  // namespace lgrpo

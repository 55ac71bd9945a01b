// SPDX-License-Identifier: Apache-2.0
//
// Latent token construction: top-K selection over a vocabulary distribution,
// Gumbel perturbations (two-sided and clipped one-sided), and the noisy
// mixture weights that turn perturbed scores into a latent embedding.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lgrpo/rng.hpp"

namespace lgrpo {

// Row-major vocab×dim view over token embeddings.
struct EmbeddingView {
    std::span<const double> data;
    std::size_t vocab = 0;
    std::size_t dim = 0;

    std::span<const double> row(std::size_t token) const { return data.subspan(token * dim, dim); }
};

struct TopKSlice {
    std::vector<int> token_ids;     // descending probability, ties by lower id
    std::vector<double> probs;      // renormalized over the slice
    std::vector<double> log_probs;  // log of the renormalized probs
    std::vector<double> full_log_probs;  // log-probability under the whole vocabulary

    std::size_t size() const noexcept { return token_ids.size(); }
};

struct LatentToken {
    std::vector<double> embedding;
    std::vector<double> weights;
    TopKSlice source;
};

enum class NoiseMode { none, two_sided, one_sided };

const char* to_string(NoiseMode mode) noexcept;

struct OneSidedBounds {
    double a = 1.5;
    double b = 3.0;
    double delta = 0.01;
};

struct NoiseConfig {
    OneSidedBounds bounds;
    double tau = 1.0;          // Gumbel temperature
    double noise_scale = 1.0;  // multiplies the raw draw before clipping
};

struct PerturbationRecord {
    std::vector<double> raw_noise;         // ξ as drawn (already scaled)
    std::vector<double> one_sided_noise;   // ξ⁺, zero unless one_sided
    std::vector<double> targets;           // frozen perturbed scores g
    std::vector<double> rollout_log_probs;  // log p_i under the rollout policy
    double temperature = 1.0;
    NoiseMode mode = NoiseMode::none;

    std::size_t size() const noexcept { return targets.size(); }
    // Perturbation actually applied to the rollout log-probs.
    std::vector<double> applied_perturbation() const;
};

// Picks the K most probable entries (ties to the lower id), optionally never
// picking `exclude`. Throws when the distribution has no positive mass or K is
// out of range.
TopKSlice top_k_slice(std::span<const double> distribution, std::size_t k,
                      std::optional<int> exclude = std::nullopt);

// Σ weights[i] · embedding(token_ids[i]).
std::vector<double> mix_embeddings(const TopKSlice& slice, std::span<const double> weights,
                                   const EmbeddingView& table);

// No-noise latent token: weights are the renormalized top-K probabilities.
LatentToken build_latent_token(std::span<const double> distribution, std::size_t k,
                               const EmbeddingView& table);

std::vector<double> sample_standard_gumbel(std::size_t n, Rng& rng);

// ξ⁺ = clip(ξ, −a, b) + a + δ per component.
std::vector<double> one_sided_transform(std::span<const double> xi, const OneSidedBounds& bounds);

// α = softmax((log p + perturbation) / τ).
std::vector<double> noisy_mixture_weights(std::span<const double> log_probs,
                                          std::span<const double> perturbation, double tau);

PerturbationRecord make_perturbation_record(std::span<const double> rollout_log_probs, NoiseMode mode,
                                            const NoiseConfig& config, Rng& rng);

void validate(const NoiseConfig& config);

}  // namespace lgrpo

// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/latent_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lgrpo/error.hpp"

namespace lgrpo {

const char* to_string(NoiseMode mode) noexcept {
    switch (mode) {
        case NoiseMode::none: return "none";
        case NoiseMode::two_sided: return "two_sided";
        case NoiseMode::one_sided: return "one_sided";
    }
    return "unknown";
}

std::vector<double> PerturbationRecord::applied_perturbation() const {
    switch (mode) {
        case NoiseMode::none: return std::vector<double>(targets.size(), 0.0);
        case NoiseMode::two_sided: return raw_noise;
        case NoiseMode::one_sided: return one_sided_noise;
    }
    return {};
}

void validate(const NoiseConfig& config) {
    const auto& b = config.bounds;
    if (!(b.a > 0.0) || !(b.b > 0.0) || !(b.delta > 0.0)) {
        throw Error(ErrorKind::config, "one-sided bounds a, b, delta must be positive");
    }
    if (!(config.tau > 0.0)) {
        throw Error(ErrorKind::config, "Gumbel temperature must be positive");
    }
    if (!(config.noise_scale >= 0.0)) {
        throw Error(ErrorKind::config, "noise_scale must be non-negative");
    }
}

TopKSlice top_k_slice(std::span<const double> distribution, std::size_t k, std::optional<int> exclude) {
    const std::size_t vocab = distribution.size();
    if (k == 0 || k > vocab) {
        throw Error(ErrorKind::invalid_argument,
                    "top-K size " + std::to_string(k) + " outside [1, " + std::to_string(vocab) + "]");
    }
    std::vector<int> order;
    order.reserve(vocab);
    for (std::size_t i = 0; i < vocab; ++i) {
        if (exclude && static_cast<int>(i) == *exclude) {
            continue;
        }
        order.push_back(static_cast<int>(i));
    }
    if (order.size() < k) {
        throw Error(ErrorKind::invalid_argument, "not enough candidate tokens for top-K");
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](int x, int y) {
                          if (distribution[x] != distribution[y]) return distribution[x] > distribution[y];
                          return x < y;
                      });
    order.resize(k);

    double mass = 0.0;
    for (int id : order) mass += distribution[id];
    if (!(mass > 0.0)) {
        throw Error(ErrorKind::domain, "top-K slice has no probability mass");
    }

    TopKSlice slice;
    slice.token_ids = order;
    slice.probs.reserve(k);
    slice.log_probs.reserve(k);
    slice.full_log_probs.reserve(k);
    for (int id : order) {
        const double p = distribution[id] / mass;
        slice.probs.push_back(p);
        slice.log_probs.push_back(std::log(p));
        slice.full_log_probs.push_back(std::log(distribution[id]));
    }
    return slice;
}

std::vector<double> mix_embeddings(const TopKSlice& slice, std::span<const double> weights,
                                   const EmbeddingView& table) {
    if (weights.size() != slice.size()) {
        throw Error(ErrorKind::shape_mismatch, "mixture weights do not match top-K slice");
    }
    std::vector<double> out(table.dim, 0.0);
    for (std::size_t i = 0; i < slice.size(); ++i) {
        const auto e = table.row(static_cast<std::size_t>(slice.token_ids[i]));
        for (std::size_t d = 0; d < table.dim; ++d) {
            out[d] += weights[i] * e[d];
        }
    }
    return out;
}

LatentToken build_latent_token(std::span<const double> distribution, std::size_t k,
                               const EmbeddingView& table) {
    if (distribution.size() != table.vocab) {
        throw Error(ErrorKind::shape_mismatch, "distribution size differs from vocabulary size");
    }
    const double total = std::accumulate(distribution.begin(), distribution.end(), 0.0);
    if (!(total > 0.0)) {
        throw Error(ErrorKind::domain, "distribution has no probability mass");
    }
    LatentToken token;
    token.source = top_k_slice(distribution, k);
    token.weights = token.source.probs;
    token.embedding = mix_embeddings(token.source, token.weights, table);
    return token;
}

std::vector<double> sample_standard_gumbel(std::size_t n, Rng& rng) {
    std::vector<double> out(n);
    for (double& x : out) x = rng.gumbel();
    return out;
}

std::vector<double> one_sided_transform(std::span<const double> xi, const OneSidedBounds& bounds) {
    if (!(bounds.a > 0.0) || !(bounds.b > 0.0) || !(bounds.delta > 0.0)) {
        throw Error(ErrorKind::config, "one-sided bounds a, b, delta must be positive");
    }
    std::vector<double> out(xi.size());
    for (std::size_t i = 0; i < xi.size(); ++i) {
        out[i] = std::clamp(xi[i], -bounds.a, bounds.b) + bounds.a + bounds.delta;
    }
    return out;
}

std::vector<double> noisy_mixture_weights(std::span<const double> log_probs,
                                          std::span<const double> perturbation, double tau) {
    if (!(tau > 0.0)) {
        throw Error(ErrorKind::config, "Gumbel temperature must be positive");
    }
    if (log_probs.size() != perturbation.size() || log_probs.empty()) {
        throw Error(ErrorKind::shape_mismatch, "log-probs and perturbation sizes differ");
    }
    std::vector<double> scores(log_probs.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = (log_probs[i] + perturbation[i]) / tau;
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double& s : scores) {
        s = std::exp(s - mx);
        total += s;
    }
    for (double& s : scores) s /= total;
    return scores;
}

PerturbationRecord make_perturbation_record(std::span<const double> rollout_log_probs, NoiseMode mode,
                                            const NoiseConfig& config, Rng& rng) {
    validate(config);
    const std::size_t k = rollout_log_probs.size();
    PerturbationRecord rec;
    rec.mode = mode;
    rec.temperature = config.tau;
    rec.rollout_log_probs.assign(rollout_log_probs.begin(), rollout_log_probs.end());
    rec.raw_noise.assign(k, 0.0);
    rec.one_sided_noise.assign(k, 0.0);
    rec.targets = rec.rollout_log_probs;
    if (mode == NoiseMode::none) {
        return rec;
    }
    rec.raw_noise = sample_standard_gumbel(k, rng);
    for (double& x : rec.raw_noise) x *= config.noise_scale;
    if (mode == NoiseMode::two_sided) {
        for (std::size_t i = 0; i < k; ++i) rec.targets[i] += rec.raw_noise[i];
    } else {
        rec.one_sided_noise = one_sided_transform(rec.raw_noise, config.bounds);
        for (std::size_t i = 0; i < k; ++i) rec.targets[i] += rec.one_sided_noise[i];
    }
    return rec;
}

}  // namespace lgrpo

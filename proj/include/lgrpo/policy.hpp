// SPDX-License-Identifier: Apache-2.0
//
// A small pre-norm causal transformer over a 32-token vocabulary. Every input
// position is a d-dimensional vector: either a token embedding looked up from
// the (learnable) table, or a frozen latent embedding recorded at rollout.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lgrpo/autodiff.hpp"
#include "lgrpo/latent_core.hpp"
#include "lgrpo/rng.hpp"

namespace lgrpo {

struct ModelConfig {
    std::size_t vocab = 32;
    std::size_t dim = 32;
    std::size_t layers = 2;
    std::size_t mlp_hidden = 64;
    std::size_t max_positions = 96;

    bool operator==(const ModelConfig&) const = default;
};

struct TensorSlot {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const noexcept { return rows * cols; }
};

class PolicyParams {
public:
    PolicyParams() = default;
    explicit PolicyParams(const ModelConfig& config);

    // Deterministic random initialisation.
    static PolicyParams init(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    const std::vector<TensorSlot>& layout() const noexcept { return layout_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    std::span<const double> tensor(std::size_t slot) const;
    std::span<double> tensor(std::size_t slot);
    std::size_t slot_index(const std::string& name) const;

    EmbeddingView embeddings() const;

    std::uint64_t version() const noexcept { return version_; }
    void bump_version() noexcept { ++version_; }
    void set_version(std::uint64_t v) noexcept { version_ = v; }

    bool all_finite() const;

    // Fixed slot order.
    static constexpr std::size_t kTokenEmbedding = 0;
    static constexpr std::size_t kPositionEmbedding = 1;
    static constexpr std::size_t kPerLayer = 8;  // wq wk wv wo w1 b1 w2 b2
    std::size_t layer_slot(std::size_t layer, std::size_t which) const { return 2 + layer * kPerLayer + which; }
    std::size_t head_weight_slot() const { return 2 + config_.layers * kPerLayer; }
    std::size_t head_bias_slot() const { return head_weight_slot() + 1; }

private:
    ModelConfig config_;
    std::vector<TensorSlot> layout_;
    std::vector<double> values_;
    std::uint64_t version_ = 0;
};

// Frozen, shareable copy (θ_old, π_ref).
using FrozenParams = std::shared_ptr<const PolicyParams>;
FrozenParams snapshot(const PolicyParams& params);

using TokenId = int;
using LatentVector = std::vector<double>;
using InputElement = std::variant<TokenId, LatentVector>;

struct ParamLeaves {
    std::vector<ad::Value> tensors;
};

ParamLeaves bind_params(const PolicyParams& params, ad::Tape& tape, bool requires_grad);

// Adds each bound leaf's gradient into a flat vector laid out like params.
void accumulate_gradients(const PolicyParams& params, const ParamLeaves& leaves, std::span<double> grads);

struct SequenceOutput {
    ad::Value logits;                      // T × V
    std::vector<ad::Value> latent_inputs;  // constants fed at latent positions
};

SequenceOutput forward_sequence(const PolicyParams& params, const ParamLeaves& leaves,
                                std::span<const InputElement> inputs);

// Next-position logits for a prefix (no gradient tracking).
std::vector<double> forward(const PolicyParams& params, std::span<const InputElement> prefix);

// ---------------------------------------------------------------------------
// Rollouts

enum class RolloutMode {
    latent_deterministic,
    latent_one_sided,
    latent_two_sided,
    latent_sampled_inference,
    explicit_sampled,
    explicit_greedy,
};

const char* to_string(RolloutMode mode) noexcept;
NoiseMode noise_mode_for(RolloutMode mode) noexcept;
bool is_latent(RolloutMode mode) noexcept;

struct RolloutLimits {
    std::size_t t_lat_max = 12;
    std::size_t l_max = 64;
};

struct LatentSettings {
    std::size_t k = 5;
    NoiseConfig noise;
};

struct LatentStep {
    LatentToken token;
    PerturbationRecord record;
};

struct Trajectory {
    std::vector<int> prompt;
    std::vector<LatentStep> latent_steps;
    std::vector<int> explicit_steps;
    bool terminated = false;
    double reward = 0.0;
    // Per generated step: latent surrogate log-likelihood or explicit log-prob
    // under the rollout parameters.
    std::vector<double> per_step_rollout_logs;

    std::size_t t_lat() const noexcept { return latent_steps.size(); }
    std::size_t t_exp() const noexcept { return explicit_steps.size(); }
    std::size_t length() const noexcept { return t_lat() + t_exp(); }

    // Prompt followed by every generated step except the last.
    std::vector<InputElement> replay_inputs() const;
};

Trajectory rollout(const PolicyParams& params, std::span<const int> prompt, RolloutMode mode,
                   const RolloutLimits& limits, const LatentSettings& latent, Rng& rng);

struct ReplayEval {
    ParamLeaves leaves;
    ad::Value log_probs;                   // L × V, row t = step t's distribution
    std::vector<ad::Value> step_log;       // ℓ_t per step (1×1)
    std::vector<ad::Value> latent_inputs;  // recorded latent embeddings (constants)
};

// Replays the recorded prefix under `params` and rebuilds per-step log
// quantities on `tape`.
ReplayEval teacher_forced_eval(const PolicyParams& params, const Trajectory& traj, ad::Tape& tape,
                               bool requires_grad = true);

// ---------------------------------------------------------------------------
// Optimiser

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double learning_rate = 1e-4;
    double grad_clip = 1.0;  // global L2 norm; ≤ 0 disables
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t steps = 0;
    std::uint64_t skipped = 0;
};

// Applies one descent step with gradient `grads` of the loss. Returns false
// (and counts a skip) when the gradient has a non-finite entry.
bool optimizer_step(PolicyParams& params, std::span<const double> grads, const OptimizerConfig& config,
                    OptimizerState& state);

double l2_norm(std::span<const double> v);

}  // namespace lgrpo

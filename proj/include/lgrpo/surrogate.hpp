// SPDX-License-Identifier: Apache-2.0
//
// Log-density and surrogate log-likelihood terms for latent and explicit
// steps, plus the analytic gradient identities used to audit them.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "lgrpo/autodiff.hpp"
#include "lgrpo/latent_core.hpp"

namespace lgrpo {

// Σ_i [ −Δ_i − exp(−Δ_i) ] with Δ_i = target_i − log p_i (two-sided Gumbel).
ad::Value gumbel_log_density(std::span<const double> targets, const ad::Value& current_log_probs);

struct MarginVector {
    std::vector<double> deltas;  // forward margins g*_i − log p_i(θ)
    std::vector<bool> flipped;   // deltas[i] < 0
    ad::Value value;             // forward = deltas; backward sign flipped where crossed
};

MarginVector one_sided_margin(std::span<const double> targets, const ad::Value& current_log_probs);

// Σ_i [ −Δ̃_i − exp(−Δ̃_i) ] over the conditionally flipped margins.
ad::Value one_sided_log_likelihood(const PerturbationRecord& record, const ad::Value& current_log_probs);

// Surrogate used for a latent step under the record's noise mode: one-sided
// records use the flipped-margin surrogate, others the two-sided density.
ad::Value latent_step_log_likelihood(const PerturbationRecord& record, const ad::Value& current_log_probs);

// log softmax(logits)[token]; logits is 1×V.
ad::Value explicit_log_prob(const ad::Value& logits, int token_id);

// KL(p ‖ q) with 0·log 0 = 0 and q floored at 1e-12.
double categorical_kl(std::span<const double> current, std::span<const double> reference);

// Differentiable Σ_rows KL(softmax(row) ‖ ref_row) given log-softmax rows of
// the current policy and the (floored) reference log-probabilities.
ad::Value categorical_kl_rows(const ad::Value& current_log_probs, std::span<const double> reference_log_probs);

constexpr double kReferenceFloor = 1e-12;

// ---------------------------------------------------------------------------
// Gradient audit

struct GradientReport {
    NoiseMode mode = NoiseMode::one_sided;
    std::vector<double> deltas;
    std::vector<double> per_component_score;  // analytic h_i = ∂ℓ/∂log p_i
    double score_sum = 0.0;                   // H
    std::vector<double> logit_grads;          // analytic ∂ℓ/∂z_l
    std::vector<double> autodiff_score;
    std::vector<double> autodiff_logit_grads;
    std::vector<double> finite_diff_score;
    std::vector<double> finite_diff_logit_grads;
    double max_rel_error = 0.0;
    std::string worst_identity;

    bool passed(double tol = 1e-4) const { return max_rel_error <= tol; }
    // One line-delimited JSON record.
    std::string to_json_line() const;
};

// Deliberate defect for exercising the audit's failure path.
enum class AuditFault { none, flipped_branch_sign };

// Evaluates a latent step at logits z (1×V values) against a frozen record whose
// targets refer to the top-K ids. The score is computed three ways: the
// piecewise closed forms, autodiff through the surrogate graph, and central
// finite differences (step 1e-5) of the surrogate with crossed margins
// reflected about their current value.
GradientReport gradient_report(const PerturbationRecord& record, std::span<const int> token_ids,
                               std::span<const double> logits, AuditFault fault = AuditFault::none);

// Relative closeness used by the audit: |a−b| ≤ abs_tol + rel_tol·max(|a|,|b|).
bool close_rel(double a, double b, double rel_tol = 1e-4, double abs_tol = 1e-7);

// Closed-form direct score for one component.
double two_sided_score(double delta);
double one_sided_score(double delta);

}  // namespace lgrpo

// SPDX-License-Identifier: Apache-2.0
//
// Randomised gradient-identity audit over latent steps. Each trial draws a
// vocabulary, a top-K slice and a one-sided record at "rollout" logits, then
// moves the logits so that some margins cross zero and checks both the
// one-sided and the two-sided surrogate against their closed forms.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lgrpo/surrogate.hpp"

namespace lgrpo {

struct AuditInstance {
    std::vector<double> rollout_logits;
    std::vector<double> current_logits;
    std::vector<int> token_ids;
    PerturbationRecord record;  // one-sided
};

// K in [1, 8], V in [K+1, 32].
AuditInstance random_audit_instance(Rng& rng);

struct AuditSummary {
    std::size_t trials = 0;
    std::size_t failures = 0;
    double max_rel_error = 0.0;
    std::string worst_identity;
    // Trials whose one-sided scores were all ≥ 0, and > 0 wherever Δ ≠ 0.
    std::size_t one_sided_aligned = 0;
    // Trials with some Δ < 0, and how many of them showed a negative two-sided score.
    std::size_t crossed_trials = 0;
    std::size_t two_sided_witnesses = 0;

    bool passed(double tol = 1e-4) const { return failures == 0 && max_rel_error <= tol; }
    bool aligned() const { return one_sided_aligned == trials && two_sided_witnesses == crossed_trials; }
    std::string to_json_line() const;
};

using AuditCallback = std::function<void(std::size_t trial, const GradientReport&)>;

AuditSummary run_gradient_audit(std::size_t trials, std::uint64_t seed, AuditFault fault = AuditFault::none,
                                const AuditCallback& on_report = {});

}  // namespace lgrpo

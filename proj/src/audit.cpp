// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/audit.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "lgrpo/error.hpp"
#include "lgrpo/kernels.hpp"

namespace lgrpo {

namespace {

double normal(Rng& rng) {
    // Box-Muller on two uniform draws.
    const double u1 = std::max(rng.uniform01(), 1e-300);
    const double u2 = rng.uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace

AuditInstance random_audit_instance(Rng& rng) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.below(8));
    const std::size_t vocab = k + 1 + static_cast<std::size_t>(rng.below(32 - k));
    AuditInstance inst;
    inst.rollout_logits.resize(vocab);
    for (double& z : inst.rollout_logits) z = 2.0 * normal(rng);

    std::vector<double> probs(vocab);
    std::vector<double> lsm(vocab);
    kernels::softmax_rows(inst.rollout_logits, probs, 1, vocab);
    kernels::log_softmax_rows(inst.rollout_logits, lsm, 1, vocab);
    TopKSlice slice = top_k_slice(probs, k);
    for (std::size_t i = 0; i < k; ++i) slice.full_log_probs[i] = lsm[static_cast<std::size_t>(slice.token_ids[i])];
    inst.token_ids = slice.token_ids;
    inst.record = make_perturbation_record(slice.full_log_probs, NoiseMode::one_sided, NoiseConfig{}, rng);

    // Push the selected logits up by up to a few nats so that some margins cross.
    inst.current_logits = inst.rollout_logits;
    for (double& z : inst.current_logits) z += 0.5 * normal(rng);
    for (int id : inst.token_ids) inst.current_logits[static_cast<std::size_t>(id)] += 3.0 * rng.uniform01();
    return inst;
}

AuditSummary run_gradient_audit(std::size_t trials, std::uint64_t seed, AuditFault fault,
                                const AuditCallback& on_report) {
    if (trials == 0) throw Error(ErrorKind::invalid_argument, "gradient audit needs at least one trial");
    AuditSummary s;
    s.trials = trials;
    auto track = [&](const GradientReport& r) {
        if (!r.passed()) ++s.failures;
        if (s.worst_identity.empty() || r.max_rel_error > s.max_rel_error) {
            s.max_rel_error = r.max_rel_error;
            s.worst_identity = r.worst_identity;
        }
    };
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, {t}));
        const AuditInstance inst = random_audit_instance(rng);

        const GradientReport one = gradient_report(inst.record, inst.token_ids, inst.current_logits, fault);
        PerturbationRecord two_rec = inst.record;
        two_rec.mode = NoiseMode::two_sided;
        const GradientReport two = gradient_report(two_rec, inst.token_ids, inst.current_logits, fault);
        track(one);
        track(two);
        if (on_report) {
            on_report(t, one);
            on_report(t, two);
        }

        bool aligned = true;
        bool crossed = false;
        bool witness = false;
        for (std::size_t i = 0; i < one.deltas.size(); ++i) {
            const double d = one.deltas[i];
            const double h = one.per_component_score[i];
            if (h < 0.0 || (d != 0.0 && !(h > 0.0))) aligned = false;
            if (d < 0.0) {
                crossed = true;
                if (two.per_component_score[i] < 0.0) witness = true;
            }
        }
        if (aligned) ++s.one_sided_aligned;
        if (crossed) {
            ++s.crossed_trials;
            if (witness) ++s.two_sided_witnesses;
        }
    }
    return s;
}

std::string AuditSummary::to_json_line() const {
    nlohmann::json j;
    j["trials"] = trials;
    j["failures"] = failures;
    j["max_rel_error"] = max_rel_error;
    j["worst_identity"] = worst_identity;
    j["one_sided_aligned"] = one_sided_aligned;
    j["crossed_trials"] = crossed_trials;
    j["two_sided_witnesses"] = two_sided_witnesses;
    j["passed"] = passed();
    j["aligned"] = aligned();
    return j.dump();
}

}  // namespace lgrpo

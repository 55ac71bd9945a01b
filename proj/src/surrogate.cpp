// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "lgrpo/error.hpp"
#include "lgrpo/kernels.hpp"

namespace lgrpo {

namespace {

void check_width(std::span<const double> targets, const ad::Value& current) {
    if (current.rows() != 1 || current.cols() != targets.size()) {
        throw Error(ErrorKind::misalignment, "surrogate expects 1×" + std::to_string(targets.size()) +
                                                 " log-probs, got " + std::to_string(current.rows()) + "×" +
                                                 std::to_string(current.cols()));
    }
}

// Σ [ −m − exp(−m) ] over a row of margins.
ad::Value gumbel_terms(const ad::Value& margin) {
    return ad::sum(ad::neg(margin) - ad::exp(ad::neg(margin)));
}

double phi(double margin) { return -margin - std::exp(-margin); }

}  // namespace

ad::Value gumbel_log_density(std::span<const double> targets, const ad::Value& current_log_probs) {
    check_width(targets, current_log_probs);
    ad::Tape& tape = *current_log_probs.tape();
    const ad::Value g = tape.row(targets);
    return gumbel_terms(g - current_log_probs);
}

MarginVector one_sided_margin(std::span<const double> targets, const ad::Value& current_log_probs) {
    check_width(targets, current_log_probs);
    ad::Tape& tape = *current_log_probs.tape();
    const ad::Value g = tape.row(targets);
    const ad::Value delta = g - current_log_probs;

    MarginVector out;
    out.deltas.assign(delta.data().begin(), delta.data().end());
    out.flipped.resize(out.deltas.size());
    bool any = false;
    for (std::size_t i = 0; i < out.deltas.size(); ++i) {
        out.flipped[i] = out.deltas[i] < 0.0;
        any = any || out.flipped[i];
    }
    out.value = any ? ad::select(out.flipped, ad::flip_grad(delta), delta) : delta;
    return out;
}

ad::Value one_sided_log_likelihood(const PerturbationRecord& record, const ad::Value& current_log_probs) {
    if (record.mode != NoiseMode::one_sided) {
        throw Error(ErrorKind::invalid_argument,
                    std::string("one-sided surrogate needs a one_sided record, got ") + to_string(record.mode));
    }
    return gumbel_terms(one_sided_margin(record.targets, current_log_probs).value);
}

ad::Value latent_step_log_likelihood(const PerturbationRecord& record, const ad::Value& current_log_probs) {
    if (record.mode == NoiseMode::one_sided) {
        return one_sided_log_likelihood(record, current_log_probs);
    }
    return gumbel_log_density(record.targets, current_log_probs);
}

ad::Value explicit_log_prob(const ad::Value& logits, int token_id) {
    if (logits.rows() != 1) {
        throw Error(ErrorKind::shape_mismatch, "explicit_log_prob expects a single row of logits");
    }
    if (token_id < 0 || static_cast<std::size_t>(token_id) >= logits.cols()) {
        throw Error(ErrorKind::invalid_argument, "token id " + std::to_string(token_id) + " outside vocabulary");
    }
    return ad::gather(ad::log_softmax(logits), {static_cast<std::size_t>(token_id)}, {1, 1});
}

double categorical_kl(std::span<const double> current, std::span<const double> reference) {
    if (current.size() != reference.size()) {
        throw Error(ErrorKind::shape_mismatch, "KL over distributions of different sizes");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < current.size(); ++i) {
        if (current[i] <= 0.0) {
            continue;
        }
        const double q = std::max(reference[i], kReferenceFloor);
        kl += current[i] * (std::log(current[i]) - std::log(q));
    }
    return kl;
}

ad::Value categorical_kl_rows(const ad::Value& current_log_probs, std::span<const double> reference_log_probs) {
    if (current_log_probs.size() != reference_log_probs.size()) {
        throw Error(ErrorKind::shape_mismatch, "reference log-probs do not match current rows");
    }
    ad::Tape& tape = *current_log_probs.tape();
    std::vector<double> floored(reference_log_probs.begin(), reference_log_probs.end());
    const double floor_log = std::log(kReferenceFloor);
    for (double& v : floored) v = std::max(v, floor_log);
    const ad::Value ref = tape.constant(current_log_probs.shape(), std::move(floored));
    const ad::Value p = ad::exp(current_log_probs);
    return ad::sum(p * (current_log_probs - ref));
}

double two_sided_score(double delta) { return 1.0 - std::exp(-delta); }

double one_sided_score(double delta) {
    return delta >= 0.0 ? 1.0 - std::exp(-delta) : std::exp(-delta) - 1.0;
}

bool close_rel(double a, double b, double rel_tol, double abs_tol) {
    return std::fabs(a - b) <= abs_tol + rel_tol * std::max(std::fabs(a), std::fabs(b));
}

// ---------------------------------------------------------------------------

namespace {

// Normalised error; ≤ 1e-4 exactly when close_rel(a, b) holds at default tolerances.
double norm_err(double a, double b) {
    return std::fabs(a - b) / (1e-3 + std::max(std::fabs(a), std::fabs(b)));
}

// Surrogate value at explicit component log-probs, with margins that were
// crossed at the reference point reflected about their reference value.
double reflected_surrogate(std::span<const double> targets, std::span<const double> log_probs,
                           std::span<const double> ref_deltas, bool one_sided) {
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        double m = targets[i] - log_probs[i];
        if (one_sided && ref_deltas[i] < 0.0) {
            m = 2.0 * ref_deltas[i] - m;
        }
        total += phi(m);
    }
    return total;
}

std::vector<double> component_log_probs(std::span<const double> logits, std::span<const int> ids) {
    std::vector<double> lsm(logits.size());
    kernels::reference::log_softmax_rows(logits, lsm, 1, logits.size());
    std::vector<double> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out[i] = lsm[static_cast<std::size_t>(ids[i])];
    return out;
}

}  // namespace

GradientReport gradient_report(const PerturbationRecord& record, std::span<const int> token_ids,
                               std::span<const double> logits, AuditFault fault) {
    const std::size_t k = record.size();
    const std::size_t vocab = logits.size();
    if (token_ids.size() != k) {
        throw Error(ErrorKind::misalignment, "token ids do not match the perturbation record");
    }
    for (int id : token_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw Error(ErrorKind::invalid_argument, "token id outside vocabulary");
        }
    }
    const bool one_sided = record.mode == NoiseMode::one_sided;

    GradientReport rep;
    rep.mode = record.mode;

    std::vector<double> probs(vocab);
    kernels::reference::softmax_rows(logits, probs, 1, vocab);
    const std::vector<double> lp = component_log_probs(logits, token_ids);

    // Closed forms.
    rep.deltas.resize(k);
    rep.per_component_score.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        rep.deltas[i] = record.targets[i] - lp[i];
        double h = one_sided ? one_sided_score(rep.deltas[i]) : two_sided_score(rep.deltas[i]);
        if (fault == AuditFault::flipped_branch_sign && one_sided && rep.deltas[i] < 0.0) {
            h = -h;
        }
        rep.per_component_score[i] = h;
    }
    rep.score_sum = 0.0;
    for (double h : rep.per_component_score) rep.score_sum += h;
    rep.logit_grads.resize(vocab);
    for (std::size_t l = 0; l < vocab; ++l) {
        rep.logit_grads[l] = -probs[l] * rep.score_sum;
    }
    for (std::size_t i = 0; i < k; ++i) {
        rep.logit_grads[static_cast<std::size_t>(token_ids[i])] += rep.per_component_score[i];
    }

    // Autodiff with respect to component log-probs and to raw logits.
    {
        ad::Tape tape;
        const ad::Value x = tape.leaf({1, k}, std::span<const double>(lp), true);
        tape.backward(latent_step_log_likelihood(record, x));
        rep.autodiff_score = x.grad();
    }
    {
        ad::Tape tape;
        const ad::Value z = tape.leaf({1, vocab}, logits, true);
        std::vector<std::size_t> idx(token_ids.begin(), token_ids.end());
        const ad::Value x = ad::gather(ad::log_softmax(z), std::move(idx), {1, k});
        tape.backward(latent_step_log_likelihood(record, x));
        rep.autodiff_logit_grads = z.grad();
    }

    // Central finite differences.
    constexpr double kStep = 1e-5;
    rep.finite_diff_score.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> up = lp;
        std::vector<double> dn = lp;
        up[i] += kStep;
        dn[i] -= kStep;
        rep.finite_diff_score[i] = (reflected_surrogate(record.targets, up, rep.deltas, one_sided) -
                                    reflected_surrogate(record.targets, dn, rep.deltas, one_sided)) /
                                   (2.0 * kStep);
    }
    rep.finite_diff_logit_grads.resize(vocab);
    for (std::size_t l = 0; l < vocab; ++l) {
        std::vector<double> up(logits.begin(), logits.end());
        std::vector<double> dn(logits.begin(), logits.end());
        up[l] += kStep;
        dn[l] -= kStep;
        const double fu = reflected_surrogate(record.targets, component_log_probs(up, token_ids), rep.deltas, one_sided);
        const double fd = reflected_surrogate(record.targets, component_log_probs(dn, token_ids), rep.deltas, one_sided);
        rep.finite_diff_logit_grads[l] = (fu - fd) / (2.0 * kStep);
    }

    auto track = [&](double err, const char* identity) {
        if (rep.worst_identity.empty() || err > rep.max_rel_error) {
            rep.max_rel_error = err;
            rep.worst_identity = identity;
        }
    };
    const char* score_name = one_sided ? "one_sided_component_score" : "two_sided_component_score";
    for (std::size_t i = 0; i < k; ++i) {
        track(norm_err(rep.per_component_score[i], rep.autodiff_score[i]), score_name);
        track(norm_err(rep.per_component_score[i], rep.finite_diff_score[i]), score_name);
    }
    double resum = 0.0;
    for (double h : rep.autodiff_score) resum += h;
    track(norm_err(rep.score_sum, resum), "score_sum");
    for (std::size_t l = 0; l < vocab; ++l) {
        const bool selected = std::find(token_ids.begin(), token_ids.end(), static_cast<int>(l)) != token_ids.end();
        const char* name = selected ? "selected_logit_decomposition" : "unselected_logit_downweight";
        track(norm_err(rep.logit_grads[l], rep.autodiff_logit_grads[l]), name);
        track(norm_err(rep.logit_grads[l], rep.finite_diff_logit_grads[l]), name);
    }
    return rep;
}

std::string GradientReport::to_json_line() const {
    nlohmann::json j;
    j["mode"] = to_string(mode);
    j["deltas"] = deltas;
    j["per_component_score"] = per_component_score;
    j["score_sum"] = score_sum;
    j["logit_grads"] = logit_grads;
    j["autodiff_score"] = autodiff_score;
    j["finite_diff_score"] = finite_diff_score;
    j["max_rel_error"] = max_rel_error;
    j["worst_identity"] = worst_identity;
    j["passed"] = passed();
    return j.dump();
}

}  // namespace lgrpo

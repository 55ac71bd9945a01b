// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/warmup.hpp"

#include <cmath>
#include <exception>
#include <numeric>
#include <nlohmann/json.hpp>

#include "lgrpo/error.hpp"
#include "lgrpo/evaluate.hpp"
#include "lgrpo/kernels.hpp"

namespace lgrpo {

void validate(const WarmupConfig& c) {
    if (c.corpus_size == 0) throw Error(ErrorKind::config, "warmup.corpus_size must be positive");
    if (c.difficulty_min < 1 || c.difficulty_max < c.difficulty_min) {
        throw Error(ErrorKind::config, "warmup difficulty range is empty");
    }
    if (c.batch_size == 0) throw Error(ErrorKind::config, "warmup.batch_size must be positive");
    if (!(c.learning_rate > 0.0)) throw Error(ErrorKind::config, "warmup.learning_rate must be positive");
    if (!(c.chain_weight >= 0.0)) throw Error(ErrorKind::config, "warmup.chain_weight must be non-negative");
    if (!(c.noise_scale >= 0.0)) throw Error(ErrorKind::config, "warmup.noise_scale must be non-negative");
    if (!(c.gate_threshold >= 0.0 && c.gate_threshold <= 1.0)) {
        throw Error(ErrorKind::config, "warmup.gate_threshold must lie in [0, 1]");
    }
    if (c.gate_size == 0) throw Error(ErrorKind::config, "warmup.gate_size must be positive");
}

std::string WarmupReport::to_json_line() const {
    nlohmann::json j;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : epochs) rows.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"loss", e.loss}});
    j["epochs"] = rows;
    j["explicit_pass_at_1"] = explicit_pass_at_1;
    j["gate_pass_at_1"] = gate_pass_at_1;
    j["marker_rate"] = marker_rate;
    j["mean_length"] = mean_length;
    j["gate_passed"] = gate_passed;
    return j.dump();
}

namespace {

// Σ_t w_t·(−log p(target_t)) / Σ_t w_t, where target t is predicted at
// position first_position + t.
double weighted_cross_entropy(const PolicyParams& params, std::span<const InputElement> inputs,
                              std::size_t first_position, std::span<const int> targets,
                              std::span<const double> weights, std::span<double> grads) {
    const bool with_grad = !grads.empty();
    ad::Tape tape;
    const ParamLeaves leaves = bind_params(params, tape, with_grad);
    const SequenceOutput out = forward_sequence(params, leaves, inputs);
    const std::size_t V = params.config().vocab;
    const std::size_t n = targets.size();

    std::vector<std::size_t> rows(n * V);
    for (std::size_t k = 0; k < n * V; ++k) rows[k] = first_position * V + k;
    const ad::Value lsm = ad::log_softmax(ad::gather(out.logits, std::move(rows), {n, V}));

    std::vector<std::size_t> picks(n);
    for (std::size_t t = 0; t < n; ++t) picks[t] = t * V + static_cast<std::size_t>(targets[t]);
    const ad::Value picked = ad::gather(lsm, std::move(picks), {1, n});
    const double total_weight = std::accumulate(weights.begin(), weights.end(), 0.0);
    const ad::Value w = tape.constant({1, n}, std::vector<double>(weights.begin(), weights.end()));
    const ad::Value loss = ad::scale(ad::sum(picked * w), -1.0 / total_weight);
    if (with_grad) {
        tape.backward(loss);
        accumulate_gradients(params, leaves, grads);
    }
    return loss.item();
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
}

using ExampleLoss = std::function<double(std::size_t index, std::span<double> grads)>;

// One pass over the corpus in shuffled minibatches. Per-example gradients are
// summed in batch order.
double run_epoch(PolicyParams& params, std::size_t corpus_size, std::size_t batch_size, const OptimizerConfig& opt,
                 OptimizerState& state, Rng& order_rng, const ExampleLoss& example_loss) {
    std::vector<std::size_t> order(corpus_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, order_rng);

    const std::size_t p = params.size();
    double loss_total = 0.0;
    for (std::size_t start = 0; start < corpus_size; start += batch_size) {
        const std::size_t end = std::min(corpus_size, start + batch_size);
        const std::size_t b = end - start;
        std::vector<std::vector<double>> grads(b);
        std::vector<double> losses(b, 0.0);
        std::vector<std::exception_ptr> failures(b);
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(b); ++i) {
            const auto u = static_cast<std::size_t>(i);
            try {
                grads[u].assign(p, 0.0);
                losses[u] = example_loss(order[start + u], grads[u]);
            } catch (...) {
                failures[u] = std::current_exception();
            }
        }
        for (const auto& f : failures) {
            if (f) std::rethrow_exception(f);
        }
        std::vector<double> total(p, 0.0);
        for (std::size_t u = 0; u < b; ++u) {
            loss_total += losses[u];
            for (std::size_t k = 0; k < p; ++k) total[k] += grads[u][k];
        }
        const double inv = 1.0 / static_cast<double>(b);
        for (double& g : total) g *= inv;
        optimizer_step(params, total, opt, state);
    }
    return loss_total / static_cast<double>(corpus_size);
}

}  // namespace

double explicit_example_loss(const PolicyParams& params, const WarmupExample& ex, std::span<double> grads) {
    const std::size_t P = ex.task.prompt_tokens.size();
    std::vector<InputElement> inputs(ex.task.prompt_tokens.begin(), ex.task.prompt_tokens.end());
    for (std::size_t i = 0; i + 1 < ex.response.size(); ++i) inputs.emplace_back(ex.response[i]);
    const std::vector<double> weights(ex.response.size(), 1.0);
    return weighted_cross_entropy(params, inputs, P - 1, ex.response, weights, grads);
}

double latent_example_loss(const PolicyParams& params, const WarmupExample& ex, const LatentSettings& latent,
                           double chain_weight, Rng& rng, std::span<double> grads) {
    const std::size_t P = ex.task.prompt_tokens.size();
    const std::size_t V = params.config().vocab;
    const std::size_t c = ex.chain.size();
    const EmbeddingView table = params.embeddings();
    const NoiseMode noise = latent.noise.noise_scale > 0.0 ? NoiseMode::two_sided : NoiseMode::none;

    std::vector<InputElement> inputs(ex.task.prompt_tokens.begin(), ex.task.prompt_tokens.end());
    for (std::size_t i = 0; i < c; ++i) {
        const std::vector<double> logits = forward(params, inputs);
        std::vector<double> probs(V);
        kernels::softmax_rows(logits, probs, 1, V);
        const TopKSlice slice = top_k_slice(probs, latent.k, tok::end_latent);
        const PerturbationRecord rec = make_perturbation_record(slice.full_log_probs, noise, latent.noise, rng);
        const std::vector<double> w = noisy_mixture_weights(slice.log_probs, rec.applied_perturbation(), latent.noise.tau);
        inputs.emplace_back(mix_embeddings(slice, w, table));
    }
    // Response after the chain: marker, answer, EOS.
    const std::span<const int> tail = std::span<const int>(ex.response).subspan(c);
    for (std::size_t i = 0; i + 1 < tail.size(); ++i) inputs.emplace_back(tail[i]);

    std::vector<int> targets(ex.chain.begin(), ex.chain.end());
    targets.insert(targets.end(), tail.begin(), tail.end());
    std::vector<double> weights(c, chain_weight);
    weights.resize(targets.size(), 1.0);
    return weighted_cross_entropy(params, inputs, P - 1, targets, weights, grads);
}

PolicyParams run_warmup(const ModelConfig& model, const WarmupConfig& config, std::span<const WarmupExample> corpus,
                        std::span<const TaskInstance> gate_tasks, const RolloutLimits& limits,
                        const LatentSettings& latent, std::uint64_t seed, WarmupReport& report,
                        const WarmupProgress& progress) {
    validate(config);
    if (corpus.empty()) throw Error(ErrorKind::invalid_argument, "warmup corpus is empty");
    if (gate_tasks.empty()) throw Error(ErrorKind::invalid_argument, "warmup gate needs held-out tasks");

    PolicyParams params = PolicyParams::init(model, seed);
    OptimizerConfig opt;
    opt.kind = OptimizerKind::adam;
    opt.learning_rate = config.learning_rate;
    opt.grad_clip = 1.0;
    report = WarmupReport{};

    OptimizerState state1;
    for (std::size_t e = 0; e < config.stage1_epochs; ++e) {
        Rng order_rng(derive_seed(seed, {1, e}));
        const double loss = run_epoch(params, corpus.size(), config.batch_size, opt, state1, order_rng,
                                      [&](std::size_t i, std::span<double> g) {
                                          return explicit_example_loss(params, corpus[i], g);
                                      });
        report.epochs.push_back({1, e, loss});
        if (progress) progress(report.epochs.back());
    }

    EvalOptions eval;
    eval.limits = limits;
    eval.latent = latent;
    eval.seed = seed;
    eval.mode = RolloutMode::explicit_greedy;
    report.explicit_pass_at_1 = evaluate(params, gate_tasks, eval).pass_at_1;

    LatentSettings stage2 = latent;
    stage2.noise.noise_scale = config.noise_scale;
    OptimizerState state2;
    for (std::size_t e = 0; e < config.stage2_epochs; ++e) {
        Rng order_rng(derive_seed(seed, {2, e}));
        const double loss = run_epoch(params, corpus.size(), config.batch_size, opt, state2, order_rng,
                                      [&](std::size_t i, std::span<double> g) {
                                          Rng rng(derive_seed(seed, {3, e, i}));
                                          return latent_example_loss(params, corpus[i], stage2, config.chain_weight,
                                                                     rng, g);
                                      });
        report.epochs.push_back({2, e, loss});
        if (progress) progress(report.epochs.back());
    }

    eval.mode = RolloutMode::latent_deterministic;
    const EvalReport gate = evaluate(params, gate_tasks, eval);
    report.gate_pass_at_1 = gate.pass_at_1;
    report.marker_rate = gate.marker_rate;
    report.mean_length = gate.mean_length;
    report.gate_passed = gate.pass_at_1 >= config.gate_threshold;
    params.set_version(0);
    return params;
}

}  // namespace lgrpo

// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "lgrpo/error.hpp"
#include "lgrpo/objective.hpp"
#include "lgrpo/trainer.hpp"

using namespace lgrpo;

namespace {

ModelConfig small_model() {
    ModelConfig m;
    m.dim = 16;
    m.mlp_hidden = 24;
    m.max_positions = 40;
    return m;
}

// A group of rollouts on one prompt with hand-set rewards and validity.
RolloutGroup make_group(const PolicyParams& p, RolloutMode mode, std::uint64_t seed, const std::vector<double>& rewards,
                        const std::vector<bool>& valid, AdvantageSwitches switches = {}) {
    const TaskInstance task = generate_task(seed, 2);
    RolloutGroup g;
    GroupOutcome o;
    const RolloutLimits limits{4, 10};
    for (std::size_t j = 0; j < rewards.size(); ++j) {
        Rng rng(derive_seed(seed, {j}));
        Trajectory t = rollout(p, task.prompt_tokens, mode, limits, {}, rng);
        t.reward = rewards[j];
        o.rewards.push_back(rewards[j]);
        o.lengths.push_back(valid[j] ? std::min<std::size_t>(t.length(), limits.l_max - 1) : limits.l_max);
        o.terminated.push_back(valid[j]);
        o.correct.push_back(rewards[j] > 0.5);
        o.traj_scores.push_back(trajectory_score(t.per_step_rollout_logs));
        g.trajectories.push_back(std::move(t));
    }
    g.advantages = compute_advantages(o, limits.l_max, limits.l_max, switches);
    return g;
}

LossConfig no_kl() {
    LossConfig c;
    c.kl_coeff = 0.0;
    return c;
}

}  // namespace

TEST_CASE("clipped term examples") {
    CHECK(clipped_term(1.0, 0.5, 0.2) == 0.5);
    CHECK(clipped_term(1.5, 1.0, 0.2) == doctest::Approx(1.2));
    CHECK(clipped_term(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
    CHECK(clipped_term(1.5, -1.0, 0.2) == doctest::Approx(-1.5));
}

TEST_CASE("clipped branch carries no gradient") {
    struct Case {
        double r;
        double a;
        double grad;
    };
    for (const Case c : {Case{1.5, 1.0, 0.0}, Case{0.5, -1.0, 0.0}, Case{1.5, -1.0, -1.0}, Case{0.5, 1.0, 1.0},
                         Case{1.1, 2.0, 2.0}, Case{1.2, 1.0, 1.0}}) {
        ad::Tape tape;
        const ad::Value r = tape.scalar(c.r, true);
        tape.backward(clipped_term(r, c.a, 0.2));
        CHECK(r.grad()[0] == c.grad);
        CHECK(clipped_term(r, c.a, 0.2).item() == doctest::Approx(clipped_term(c.r, c.a, 0.2)));
    }
}

TEST_CASE("step ratio examples") {
    CHECK(step_ratio(-1.0, -1.5) == doctest::Approx(std::exp(0.5)));
    CHECK(step_ratio(-3.0, -3.0) == 1.0);
    CHECK(step_ratio(-1.0, -1.5) == doctest::Approx(1.6487).epsilon(1e-4));
}

TEST_CASE("loss configuration is validated") {
    CHECK_THROWS_AS(validate(LossConfig{0.0, 0.01}), Error);
    CHECK_THROWS_AS(validate(LossConfig{1.0, 0.01}), Error);
    CHECK_THROWS_AS(validate(LossConfig{0.2, -0.1}), Error);
    const PolicyParams p = PolicyParams::init(small_model(), 1);
    CHECK_THROWS_AS(latent_grpo_loss(std::vector<RolloutGroup>{}, p, LossConfig{}), Error);
}

TEST_CASE("no signal gives zero loss and zero gradient") {
    const PolicyParams p = PolicyParams::init(small_model(), 1);
    const std::vector<RolloutGroup> batch{make_group(p, RolloutMode::latent_one_sided, 3, {1, 1, 1, 1}, {1, 1, 1, 1})};
    const LossResult r = latent_grpo_loss(batch, p, no_kl());
    CHECK(r.loss == 0.0);
    for (double g : r.grads) CHECK(g == 0.0);
}

TEST_CASE("objective identity at the rollout parameters") {
    const PolicyParams p = PolicyParams::init(small_model(), 2);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::vector<RolloutGroup> batch{
            make_group(p, RolloutMode::latent_one_sided, seed, {1, 0, 0, 1, 0}, {1, 1, 1, 1, 0}),
            make_group(p, RolloutMode::latent_one_sided, seed + 100, {0, 1, 1, 1}, {1, 1, 0, 1})};
        double expect = 0.0;
        std::size_t n = 0;
        for (const RolloutGroup& g : batch) {
            for (std::size_t j = 0; j < g.trajectories.size(); ++j) {
                const std::size_t L = g.trajectories[j].length();
                double s = 0.0;
                for (std::size_t t = 0; t < L; ++t) s += g.advantages.masked[j][t];
                expect += s / static_cast<double>(L);
                ++n;
            }
        }
        expect = -expect / static_cast<double>(n);
        const LossResult r = latent_grpo_loss(batch, p, no_kl());
        CHECK(std::abs(r.loss - expect) <= 1e-9);
        CHECK(std::abs(r.stats.mean_ratio - 1.0) <= 1e-9);
        CHECK(std::abs(r.stats.max_ratio - 1.0) <= 1e-9);
        CHECK(r.stats.clipped_fraction == 0.0);
    }
}

TEST_CASE("a clipped step contributes no parameter gradient") {
    const PolicyParams old = PolicyParams::init(small_model(), 3);
    const RolloutGroup g = make_group(old, RolloutMode::latent_one_sided, 7, {1, 0}, {1, 1});
    const Trajectory& t = g.trajectories[0];
    PolicyParams cur = old;
    // Push every logit of the last explicit token up so its ratio leaves the trust region.
    const int token = t.explicit_steps.back();
    cur.tensor(cur.head_bias_slot())[static_cast<std::size_t>(token)] += 3.0;
    const std::size_t last = t.length() - 1;

    for (double adv : {1.0, -1.0}) {
        ad::Tape tape;
        const ReplayEval replay = teacher_forced_eval(cur, t, tape, true);
        const ad::Value ratio = ad::exp(replay.step_log[last] - tape.scalar(t.per_step_rollout_logs[last]));
        REQUIRE(ratio.item() > 1.2);
        tape.backward(clipped_term(ratio, adv, 0.2));
        std::vector<double> grads(cur.size(), 0.0);
        accumulate_gradients(cur, replay.leaves, grads);
        if (adv > 0.0) {
            for (double x : grads) CHECK(x == 0.0);
        } else {
            CHECK(l2_norm(grads) > 0.0);
        }
    }
}

TEST_CASE("invalid trajectories contribute nothing") {
    const PolicyParams p = PolicyParams::init(small_model(), 4);
    PolicyParams cur = p;
    for (double& x : cur.values()) x *= 1.01;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const RolloutGroup full =
            make_group(p, RolloutMode::latent_one_sided, seed, {1, 0, 1, 0, 1}, {1, 1, 0, 1, 0});
        RolloutGroup kept;
        for (std::size_t j : {0u, 1u, 3u}) {
            kept.trajectories.push_back(full.trajectories[j]);
            kept.advantages.masked.push_back(full.advantages.masked[j]);
        }
        const LossResult a = latent_grpo_loss(std::vector<RolloutGroup>{full}, cur, no_kl());
        const LossResult b = latent_grpo_loss(std::vector<RolloutGroup>{kept}, cur, no_kl());
        CHECK(std::abs(a.objective_sum - b.objective_sum) < 1e-12);
        for (std::size_t j : {2u, 4u}) {
            for (double x : full.advantages.masked[j]) CHECK(x == 0.0);
        }
    }
}

TEST_CASE("soft-grpo is latent-grpo with all three switches off") {
    AlgorithmSwitches s = preset(Algorithm::latent_grpo);
    for (const auto& name : ablation_names()) apply_ablation(s, name);
    const AlgorithmSwitches soft = preset(Algorithm::soft_grpo);
    CHECK(s.rollout_mode == soft.rollout_mode);
    CHECK(s.invalid_mask == soft.invalid_mask);
    CHECK(s.first_token_selection == soft.first_token_selection);

    const PolicyParams p = PolicyParams::init(small_model(), 5);
    RlConfig cfg;
    cfg.batch_size = 3;
    cfg.group_size = 4;
    cfg.limits = {4, 10};
    cfg.seed = 9;
    const auto tasks = step_tasks(cfg, 0);
    PolicyParams cur = p;
    for (double& x : cur.values()) x *= 0.99;
    const auto a = collect_batch(p, &p, tasks, 0, cfg, s);
    const auto b = collect_batch(p, &p, tasks, 0, cfg, soft);
    const LossResult la = latent_grpo_loss(a, cur, cfg.loss);
    const LossResult lb = latent_grpo_loss(b, cur, cfg.loss);
    CHECK(la.loss == lb.loss);
    CHECK(la.grads == lb.grads);
}

TEST_CASE("parallel and serial losses are bit-identical") {
    const PolicyParams p = PolicyParams::init(small_model(), 6);
    RlConfig cfg;
    cfg.batch_size = 4;
    cfg.group_size = 4;
    cfg.limits = {4, 10};
    const auto batch = collect_batch(p, &p, step_tasks(cfg, 0), 0, cfg, preset(Algorithm::soft_grpo));
    PolicyParams cur = p;
    for (double& x : cur.values()) x *= 1.02;
    const LossResult par = latent_grpo_loss(batch, cur, cfg.loss, {true, true});
    const LossResult ser = latent_grpo_loss(batch, cur, cfg.loss, {true, false});
    CHECK(par.loss == ser.loss);
    CHECK(par.grads == ser.grads);
    CHECK(par.stats.mean_kl == ser.stats.mean_kl);
}

TEST_CASE("loss gradient matches finite differences of the loss") {
    const PolicyParams p = PolicyParams::init(small_model(), 7);
    const std::vector<RolloutGroup> batch{
        make_group(p, RolloutMode::latent_two_sided, 11, {1, 0, 0}, {1, 1, 1}, {false, false})};
    PolicyParams cur = p;
    for (double& x : cur.values()) x *= 1.01;
    const LossConfig cfg{0.5, 0.0};
    const LossResult r = latent_grpo_loss(batch, cur, cfg);
    Rng rng(2);
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t k = rng.below(cur.size());
        PolicyParams up = cur;
        PolicyParams down = cur;
        up.values()[k] += 1e-5;
        down.values()[k] -= 1e-5;
        const double fd = (latent_grpo_loss(batch, up, cfg, {false, false}).loss -
                           latent_grpo_loss(batch, down, cfg, {false, false}).loss) /
                          2e-5;
        CHECK(std::abs(fd - r.grads[k]) <= 1e-7 + 1e-4 * std::max(std::abs(fd), std::abs(r.grads[k])));
    }
}

TEST_CASE("kl penalty vanishes at the reference and is non-negative elsewhere") {
    const PolicyParams p = PolicyParams::init(small_model(), 8);
    RolloutGroup g = make_group(p, RolloutMode::latent_one_sided, 13, {1, 0, 1}, {1, 1, 1});
    attach_reference(g, p);
    const std::vector<RolloutGroup> batch{g};
    CHECK(std::abs(latent_grpo_loss(batch, p, LossConfig{}).stats.mean_kl) < 1e-15);
    PolicyParams cur = p;
    for (double& x : cur.values()) x *= 1.05;
    CHECK(latent_grpo_loss(batch, cur, LossConfig{}).stats.mean_kl > 0.0);
}

TEST_CASE("positive-advantage components keep non-negative scores only under one-sided noise") {
    const PolicyParams p = PolicyParams::init(small_model(), 9);
    std::size_t one_positive = 0;
    std::size_t one_misaligned = 0;
    std::size_t two_misaligned = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto one = make_group(p, RolloutMode::latent_one_sided, seed, {1, 0, 0, 0}, {1, 1, 1, 1});
        const auto two = make_group(p, RolloutMode::latent_two_sided, seed, {1, 0, 0, 0}, {1, 1, 1, 1});
        CHECK(one.advantages.base[0] > 0.0);
        const LossResult a = latent_grpo_loss(std::vector<RolloutGroup>{one}, p, no_kl());
        const LossResult b = latent_grpo_loss(std::vector<RolloutGroup>{two}, p, no_kl());
        one_positive += a.stats.positive_components;
        one_misaligned += a.stats.misaligned_components;
        two_misaligned += b.stats.misaligned_components;
    }
    CHECK(one_positive > 0);
    CHECK(one_misaligned == 0);
    CHECK(two_misaligned > 0);
}

TEST_CASE("repeated epochs on a frozen batch cross a target and keep scores aligned") {
    const PolicyParams start = PolicyParams::init(small_model(), 10);
    RolloutGroup g = make_group(start, RolloutMode::latent_one_sided, 21, {1, 0}, {1, 1});
    REQUIRE(g.trajectories[0].t_lat() > 0);
    g.advantages.masked[1].assign(g.advantages.masked[1].size(), 0.0);
    const std::vector<RolloutGroup> batch{g};

    PolicyParams cur = start;
    OptimizerConfig opt;
    opt.kind = OptimizerKind::adam;
    opt.learning_rate = 1e-2;
    OptimizerState state;
    bool crossed = false;
    for (int epoch = 0; epoch < 50 && !crossed; ++epoch) {
        const LossResult r = latent_grpo_loss(batch, cur, no_kl());
        CHECK(r.stats.misaligned_components == 0);
        crossed = r.stats.flipped_components > 0;
        if (!crossed) REQUIRE(optimizer_step(cur, r.grads, opt, state));
    }
    CHECK(crossed);
}

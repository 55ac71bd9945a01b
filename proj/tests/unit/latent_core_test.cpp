// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "helpers.hpp"
#include "lgrpo/error.hpp"
#include "lgrpo/latent_core.hpp"

using namespace lgrpo;

namespace {

std::vector<double> random_distribution(Rng& rng, std::size_t v) {
    auto z = lgrpo::testing::normal_vector(rng, v, 2.0);
    std::vector<double> p(v);
    for (std::size_t i = 0; i < v; ++i) p[i] = lgrpo::testing::softmax_entry(z, i);
    return p;
}

}  // namespace

TEST_CASE("single-component latent token is the token embedding") {
    const std::vector<double> table{2.0, -1.0};
    const LatentToken t = build_latent_token(std::vector<double>{1.0}, 1, {table, 1, 2});
    CHECK(t.embedding == std::vector<double>{2.0, -1.0});
}

TEST_CASE("symmetric two-component latent token averages embeddings") {
    const std::vector<double> table{1.0, 0.0, 0.0, 1.0};
    const LatentToken t = build_latent_token(std::vector<double>{0.5, 0.5}, 2, {table, 2, 2});
    CHECK(t.embedding[0] == doctest::Approx(0.5));
    CHECK(t.embedding[1] == doctest::Approx(0.5));
}

TEST_CASE("top-K renormalisation before mixing") {
    const std::vector<double> table{1.0, 0.0, 0.0, 2.0, 5.0, 5.0, 7.0, 7.0};
    const LatentToken t = build_latent_token(std::vector<double>{0.5, 0.3, 0.1, 0.1}, 2, {table, 4, 2});
    CHECK(t.weights[0] == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(t.weights[1] == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(t.embedding[0] == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(t.embedding[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("top-K ties go to the lower id and exclusion is honoured") {
    const std::vector<double> p{0.1, 0.3, 0.3, 0.3};
    const TopKSlice s = top_k_slice(p, 2);
    CHECK(s.token_ids == std::vector<int>{1, 2});
    const TopKSlice e = top_k_slice(p, 2, 1);
    CHECK(e.token_ids == std::vector<int>{2, 3});
}

TEST_CASE("latent construction errors") {
    const std::vector<double> table(8, 1.0);
    CHECK_THROWS_AS(build_latent_token(std::vector<double>(4, 0.0), 2, {table, 4, 2}), Error);
    CHECK_THROWS_AS(top_k_slice(std::vector<double>{0.5, 0.5}, 3), Error);
    CHECK_THROWS_AS(top_k_slice(std::vector<double>{0.5, 0.5}, 0), Error);
}

TEST_CASE("slice invariants on random distributions") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t v = 2 + rng.below(31);
        const std::size_t k = 1 + rng.below(v);
        const auto p = random_distribution(rng, v);
        const TopKSlice s = top_k_slice(p, k);
        CHECK(std::abs(std::accumulate(s.probs.begin(), s.probs.end(), 0.0) - 1.0) < 1e-9);
        std::vector<int> ids = s.token_ids;
        std::sort(ids.begin(), ids.end());
        CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
        for (std::size_t i = 0; i < k; ++i) {
            CHECK(s.probs[i] > 0.0);
            if (i > 0) CHECK(s.probs[i] <= s.probs[i - 1]);
        }
    }
}

TEST_CASE("full-vocabulary latent token is the exact expectation") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t v = 2 + rng.below(15);
        const std::size_t d = 1 + rng.below(8);
        const auto p = random_distribution(rng, v);
        const auto table = lgrpo::testing::normal_vector(rng, v * d);
        const LatentToken t = build_latent_token(p, v, {table, v, d});
        for (std::size_t j = 0; j < d; ++j) {
            double expect = 0.0;
            for (std::size_t i = 0; i < v; ++i) expect += p[i] * table[i * d + j];
            CHECK(std::abs(t.embedding[j] - expect) < 1e-12);
        }
    }
}

TEST_CASE("standard Gumbel draws are reproducible") {
    Rng a(42);
    Rng b(42);
    CHECK(sample_standard_gumbel(100, a) == sample_standard_gumbel(100, b));
}

TEST_CASE("standard Gumbel moments") {
    Rng rng(2024);
    const auto xs = sample_standard_gumbel(1'000'000, rng);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    CHECK(std::abs(mean - 0.5772156649) < 0.01);
    CHECK(std::abs(var - M_PI * M_PI / 6.0) < 0.02);
}

TEST_CASE("one-sided transform examples") {
    const OneSidedBounds bounds{1.5, 3.0, 0.01};
    CHECK(one_sided_transform(std::vector<double>{-5.0}, bounds)[0] == doctest::Approx(0.01).epsilon(1e-14));
    CHECK(one_sided_transform(std::vector<double>{10.0}, bounds)[0] == doctest::Approx(4.51).epsilon(1e-14));
    CHECK(one_sided_transform(std::vector<double>{0.3}, bounds)[0] == doctest::Approx(1.81).epsilon(1e-14));
    CHECK_THROWS_AS(one_sided_transform(std::vector<double>{0.0}, {0.0, 3.0, 0.01}), Error);
    CHECK_THROWS_AS(one_sided_transform(std::vector<double>{0.0}, {1.5, -1.0, 0.01}), Error);
    CHECK_THROWS_AS(one_sided_transform(std::vector<double>{0.0}, {1.5, 3.0, 0.0}), Error);
}

TEST_CASE("noisy mixture weight examples") {
    const auto uniform = noisy_mixture_weights(std::vector<double>{std::log(0.5), std::log(0.5)},
                                               std::vector<double>{0.0, 0.0}, 1.0);
    CHECK(uniform[0] == doctest::Approx(0.5));
    CHECK(uniform[1] == doctest::Approx(0.5));

    const auto w = noisy_mixture_weights(std::vector<double>{0.0, -0.6931}, std::vector<double>{0.0, 0.0}, 1.0);
    CHECK(w[0] == doctest::Approx(0.6667).epsilon(1e-4));
    CHECK(w[1] == doctest::Approx(0.3333).epsilon(1e-4));

    CHECK_THROWS_AS(noisy_mixture_weights(std::vector<double>{0.0}, std::vector<double>{0.0}, 0.0), Error);
}

TEST_CASE("noisy mixture weights are shift invariant") {
    Rng rng(6);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 1 + rng.below(10);
        const auto lp = lgrpo::testing::normal_vector(rng, k, 2.0);
        const auto noise = lgrpo::testing::normal_vector(rng, k);
        const double c = lgrpo::testing::uniform_vector(rng, 1, -20.0, 20.0)[0];
        auto shifted = noise;
        for (double& x : shifted) x += c;
        const double tau = 0.2 + 2.0 * rng.uniform01();
        const auto a = noisy_mixture_weights(lp, noise, tau);
        const auto b = noisy_mixture_weights(lp, shifted, tau);
        double total = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            CHECK(std::abs(a[i] - b[i]) < 1e-12);
            total += a[i];
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("perturbation record modes") {
    Rng rng(7);
    const std::vector<double> lp{std::log(0.5), std::log(0.3), std::log(0.2)};
    NoiseConfig cfg;

    const PerturbationRecord none = make_perturbation_record(lp, NoiseMode::none, cfg, rng);
    CHECK(none.targets == lp);
    for (double x : none.raw_noise) CHECK(x == 0.0);
    for (double x : none.one_sided_noise) CHECK(x == 0.0);
    const auto w = noisy_mixture_weights(lp, none.applied_perturbation(), 1.0);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[2] == doctest::Approx(0.2));

    for (int trial = 0; trial < 1000; ++trial) {
        const PerturbationRecord r = make_perturbation_record(lp, NoiseMode::one_sided, cfg, rng);
        for (std::size_t i = 0; i < lp.size(); ++i) {
            CHECK(r.targets[i] > lp[i]);
            CHECK(r.one_sided_noise[i] >= cfg.bounds.delta);
            CHECK(r.one_sided_noise[i] <= cfg.bounds.a + cfg.bounds.b + cfg.bounds.delta);
            CHECK(std::abs((r.targets[i] - lp[i]) - r.one_sided_noise[i]) <= 1e-12);
        }
    }

    Rng r1(11);
    Rng r2(11);
    const auto a = make_perturbation_record(lp, NoiseMode::two_sided, cfg, r1);
    const auto b = make_perturbation_record(lp, NoiseMode::two_sided, cfg, r2);
    CHECK(a.targets == b.targets);
    CHECK(a.raw_noise == b.raw_noise);
}

TEST_CASE("noise scale multiplies the raw draw") {
    const std::vector<double> lp{-0.5, -1.5};
    NoiseConfig unit;
    NoiseConfig half;
    half.noise_scale = 0.5;
    Rng r1(9);
    Rng r2(9);
    const auto a = make_perturbation_record(lp, NoiseMode::two_sided, unit, r1);
    const auto b = make_perturbation_record(lp, NoiseMode::two_sided, half, r2);
    for (std::size_t i = 0; i < lp.size(); ++i) CHECK(b.raw_noise[i] == doctest::Approx(0.5 * a.raw_noise[i]));

    NoiseConfig zero;
    zero.noise_scale = 0.0;
    Rng r3(9);
    const auto z = make_perturbation_record(lp, NoiseMode::two_sided, zero, r3);
    for (std::size_t i = 0; i < lp.size(); ++i) CHECK(z.targets[i] == lp[i]);
}

// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <string>

#include "lgrpo/config.hpp"
#include "lgrpo/error.hpp"

using namespace lgrpo;

namespace {

const std::string kMinimal = "[run]\nname = demo\nseed = 4\n";

ErrorKind kind_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("config was accepted");
    return ErrorKind::io;
}

std::string message_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("minimal config resolves defaults") {
    const RunConfig c = parse_config(kMinimal);
    CHECK(c.name == "demo");
    CHECK(c.seed == 4);
    CHECK(c.algorithm == "latent_grpo");
    CHECK(c.rl.latent.k == LatentSettings{}.k);
}

TEST_CASE("values are parsed into every section") {
    const RunConfig c = parse_config(kMinimal +
                                     "[latent]\nk = 5\ntau = 0.5\n[rl]\nalgorithm = soft_grpo\nablate = invalid_mask\n"
                                     "optimizer = adam\nlearning_rate = 3e-4\n[sweep]\nseeds = 1,2\n");
    CHECK(c.rl.latent.k == 5);
    CHECK(c.rl.latent.noise.tau == 0.5);
    CHECK(c.algorithm == "soft_grpo");
    CHECK(c.ablations == std::vector<std::string>{"invalid_mask"});
    CHECK(c.rl.optimizer.kind == OptimizerKind::adam);
    CHECK(c.rl.optimizer.learning_rate == 3e-4);
    CHECK(c.sweep.seeds == std::vector<std::uint64_t>{1, 2});
}

TEST_CASE("canonical text round-trips and hashes stably") {
    const RunConfig c = parse_config(kMinimal + "[latent]\ntau = 0.3\n");
    const RunConfig back = parse_config(to_ini(c));
    CHECK(to_ini(back) == to_ini(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);
    CHECK(config_hash(c) != config_hash(parse_config(kMinimal)));
}

TEST_CASE("config errors are reported together") {
    CHECK(kind_of("[run]\nname = x\n") == ErrorKind::config);
    CHECK(kind_of(kMinimal + "[nope]\nx = 1\n") == ErrorKind::config);
    CHECK(kind_of(kMinimal + "[latent]\nwidth = 3\n") == ErrorKind::config);
    CHECK(kind_of(kMinimal + "[latent]\nk = three\n") == ErrorKind::config);
    CHECK(kind_of(kMinimal + "[rl]\noptimizer = rmsprop\n") == ErrorKind::config);
    CHECK(kind_of(kMinimal + "[rl]\nalgorithm = ppo\n") == ErrorKind::config);
    CHECK(kind_of(kMinimal + "[latent]\nk = 0\n") == ErrorKind::config);
    CHECK(kind_of(kMinimal + "[latent]\nl_max = 400\n") == ErrorKind::config);
    CHECK(kind_of("this is [not ini") == ErrorKind::config);

    const std::string msg = message_of("[latent]\nwidth = 3\n[bogus]\nx = 1\n");
    CHECK(msg.find("run.name") != std::string::npos);
    CHECK(msg.find("run.seed") != std::string::npos);
    CHECK(msg.find("latent.width") != std::string::npos);
    CHECK(msg.find("[bogus]") != std::string::npos);
}

TEST_CASE("variant names split into algorithm and ablations") {
    const Variant v = parse_variant("latent_grpo-one_sided");
    CHECK(v.algorithm == Algorithm::latent_grpo);
    CHECK(v.ablations == std::vector<std::string>{"one_sided"});
    CHECK(parse_variant("explicit_grpo").ablations.empty());
    CHECK_THROWS_AS(parse_variant("latent_grpo-nothing"), Error);

    RunConfig c = parse_config(kMinimal + "[rl]\nablate = one_sided,first_token_selection\n");
    const AlgorithmSwitches s = switches_for(c);
    CHECK(s.rollout_mode == RolloutMode::latent_two_sided);
    CHECK(s.invalid_mask);
    CHECK(!s.first_token_selection);
}

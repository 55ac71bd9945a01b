// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>
#include <sstream>
#include <utility>

#include "lgrpo/error.hpp"
#include "lgrpo/task_env.hpp"

using namespace lgrpo;

namespace {

TaskInstance manual(std::vector<int> operands, std::vector<int> operators) {
    TaskInstance t;
    t.operands = std::move(operands);
    t.operators = std::move(operators);
    t.difficulty = static_cast<int>(t.operators.size());
    return t;
}

// Independent left-to-right evaluation.
int evaluate_left_to_right(const TaskInstance& t) {
    long acc = t.operands[0];
    for (std::size_t i = 0; i < t.operators.size(); ++i) {
        const long b = t.operands[i + 1];
        if (t.operators[i] == tok::plus) acc += b;
        if (t.operators[i] == tok::minus) acc -= b;
        if (t.operators[i] == tok::times) acc *= b;
        acc = ((acc % t.modulus) + t.modulus) % t.modulus;
    }
    return static_cast<int>(acc);
}

}  // namespace

TEST_CASE("left-to-right running values") {
    CHECK(running_values(manual({7, 5}, {tok::plus})) == std::vector<int>{2});
    CHECK(running_values(manual({3, 4, 2}, {tok::plus, tok::times})) == std::vector<int>{7, 4});
    CHECK(running_values(manual({2, 5}, {tok::minus})) == std::vector<int>{7});

    const WarmupExample ex = make_warmup_example([] {
        TaskInstance t = manual({3, 4, 2}, {tok::plus, tok::times});
        t.gold_answer_tokens = {4};
        return t;
    }());
    CHECK(ex.chain == std::vector<int>{7, 4});
    CHECK(ex.response == std::vector<int>{7, 4, tok::end_latent, 4, tok::eos});
}

TEST_CASE("generated tasks are deterministic and self-consistent") {
    CHECK_THROWS_AS(generate_task(1, 0), Error);
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const int difficulty = 1 + static_cast<int>(seed % 6);
        const TaskInstance a = generate_task(seed, difficulty);
        CHECK(a == generate_task(seed, difficulty));
        CHECK(a.operators.size() == static_cast<std::size_t>(difficulty));
        for (int v : a.operands) CHECK((v >= 0 && v <= 9));
        CHECK(a.gold_answer_tokens == std::vector<int>{evaluate_left_to_right(a)});
        CHECK(verify(a.gold_answer_tokens, a) == 1.0);
        CHECK(a.prompt_tokens.front() == tok::bos);
        CHECK(a.prompt_tokens.back() == tok::equals);
    }
}

TEST_CASE("verifier is exact-match") {
    const TaskInstance t = generate_task(3, 2);
    const int gold = t.gold_answer_tokens[0];
    CHECK(verify(std::vector<int>{gold}, t) == 1.0);
    CHECK(verify(std::vector<int>{gold, tok::eos}, t) == 1.0);
    CHECK(verify(std::vector<int>{gold, gold}, t) == 0.0);
    CHECK(verify(std::vector<int>{gold, 3, tok::eos}, t) == 0.0);
    CHECK(verify(std::vector<int>{}, t) == 0.0);
    CHECK(verify(std::vector<int>{tok::eos}, t) == 0.0);
    CHECK(verify(std::vector<int>{(gold + 1) % 10}, t) == 0.0);
    CHECK(verify(std::vector<int>{gold}, t) == verify(std::vector<int>{gold}, t));
}

TEST_CASE("answer extraction follows the marker") {
    CHECK(extract_answer(std::vector<int>{7, tok::end_latent, 4, tok::eos}) == std::vector<int>{4, tok::eos});
    CHECK(extract_answer(std::vector<int>{tok::end_latent, 4, tok::eos}) == std::vector<int>{4, tok::eos});
    CHECK(extract_answer(std::vector<int>{4, tok::eos}) == std::vector<int>{4, tok::eos});
}

TEST_CASE("warmup corpus chains end at the answer") {
    CHECK_THROWS_AS(make_warmup_corpus(0, 1, 2, 1), Error);
    CHECK(make_warmup_corpus(1, 1, 1, 1).size() == 1);
    const auto corpus = make_warmup_corpus(600, 1, 6, 11);
    for (const auto& ex : corpus) {
        CHECK(ex.chain.back() == ex.task.gold_answer_tokens[0]);
        CHECK(ex.chain.size() == static_cast<std::size_t>(ex.task.difficulty));
    }
}

TEST_CASE("train and evaluation splits are disjoint") {
    std::set<std::pair<std::uint64_t, int>> train;
    for (const auto& ex : make_warmup_corpus(2000, 1, 3, 5)) train.insert({ex.task.seed, ex.task.difficulty});
    for (int d = 1; d <= 3; ++d) {
        for (const auto& t : make_eval_set(500, d, 5)) CHECK(train.count({t.seed, t.difficulty}) == 0);
    }
}

TEST_CASE("corpus round-trips through line-delimited records") {
    const auto corpus = make_warmup_corpus(20, 1, 3, 2);
    std::stringstream ss;
    write_corpus(ss, corpus);
    const auto back = read_corpus(ss);
    REQUIRE(back.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(back[i].task == corpus[i].task);
        CHECK(back[i].response == corpus[i].response);
    }
    std::stringstream bad("{\"seed\": 1, \"difficulty\": 2, \"prompt\": [1], \"gold\": [3]}\n");
    CHECK_THROWS_AS(read_corpus(bad), Error);
    std::stringstream garbage("not json\n");
    CHECK_THROWS_AS(read_corpus(garbage), Error);
}

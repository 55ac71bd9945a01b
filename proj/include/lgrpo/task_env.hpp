// SPDX-License-Identifier: Apache-2.0
//
// Synthetic modular-arithmetic chains with exact-match rewards.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace lgrpo {

namespace tok {
// Digits 0–9 are their own ids.
constexpr int plus = 10;
constexpr int minus = 11;
constexpr int times = 12;
constexpr int equals = 13;
constexpr int mod = 14;
constexpr int bos = 15;
constexpr int end_latent = 16;
constexpr int eos = 17;
constexpr int vocab_size = 32;  // ids 18–31 are unused
}  // namespace tok

std::string token_text(int id);
std::string render(std::span<const int> tokens);

struct TaskInstance {
    std::vector<int> prompt_tokens;
    std::vector<int> gold_answer_tokens;
    std::vector<int> operands;  // difficulty + 1 values
    std::vector<int> operators;  // difficulty token ids
    int modulus = 10;
    int difficulty = 1;
    std::uint64_t seed = 0;

    bool operator==(const TaskInstance&) const = default;
};

// Left-to-right running values, one per operator, each reduced mod `modulus`.
std::vector<int> running_values(const TaskInstance& task);

TaskInstance generate_task(std::uint64_t seed, int difficulty, int modulus = 10);

// 1.0 iff answer (with one trailing EOS removed) equals the gold tokens.
double verify(std::span<const int> answer_tokens, const TaskInstance& task);

// The answer part of an explicit segment: everything after the first
// end-of-latent marker, or the whole segment when no marker was emitted.
std::vector<int> extract_answer(std::span<const int> explicit_tokens);

enum class Split : std::uint64_t { train = 0, eval = 1 };

// Task seed for item `index` of a split. Train seeds are even and eval seeds
// odd, so the two splits never share a (seed, difficulty) pair.
std::uint64_t task_seed(std::uint64_t base_seed, std::uint64_t index, Split split);

struct WarmupExample {
    TaskInstance task;
    std::vector<int> chain;     // running values
    std::vector<int> response;  // chain, marker, answer, EOS
};

WarmupExample make_warmup_example(const TaskInstance& task);

std::vector<WarmupExample> make_warmup_corpus(std::size_t n, int difficulty_min, int difficulty_max,
                                              std::uint64_t seed, Split split = Split::train,
                                              int modulus = 10);

// Held-out prompts for one difficulty.
std::vector<TaskInstance> make_eval_set(std::size_t n, int difficulty, std::uint64_t seed, int modulus = 10);

// One JSON object per line: seed, difficulty, modulus, prompt, gold.
void write_corpus(std::ostream& out, std::span<const WarmupExample> corpus);
std::vector<WarmupExample> read_corpus(std::istream& in);

}  // namespace lgrpo

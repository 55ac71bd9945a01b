// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/task_env.hpp"

#include <algorithm>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>

#include "lgrpo/error.hpp"
#include "lgrpo/rng.hpp"

namespace lgrpo {

std::string token_text(int id) {
    if (id >= 0 && id <= 9) return std::string(1, static_cast<char>('0' + id));
    switch (id) {
        case tok::plus: return "+";
        case tok::minus: return "-";
        case tok::times: return "*";
        case tok::equals: return "=";
        case tok::mod: return " mod ";
        case tok::bos: return "<bos>";
        case tok::end_latent: return "<eol>";
        case tok::eos: return "<eos>";
        default: return "<u" + std::to_string(id) + ">";
    }
}

std::string render(std::span<const int> tokens) {
    std::string s;
    for (int t : tokens) s += token_text(t);
    return s;
}

namespace {

std::vector<int> digits_of(int value) {
    std::string s = std::to_string(value);
    std::vector<int> out;
    for (char c : s) out.push_back(c - '0');
    return out;
}

int apply(int acc, int op, int operand, int modulus) {
    int r = 0;
    switch (op) {
        case tok::plus: r = acc + operand; break;
        case tok::minus: r = acc - operand; break;
        case tok::times: r = acc * operand; break;
        default: throw Error(ErrorKind::invalid_argument, "unknown operator token");
    }
    return ((r % modulus) + modulus) % modulus;
}

}  // namespace

std::vector<int> running_values(const TaskInstance& task) {
    std::vector<int> out;
    int acc = task.operands.at(0) % task.modulus;
    for (std::size_t i = 0; i < task.operators.size(); ++i) {
        acc = apply(acc, task.operators[i], task.operands.at(i + 1), task.modulus);
        out.push_back(acc);
    }
    return out;
}

TaskInstance generate_task(std::uint64_t seed, int difficulty, int modulus) {
    if (difficulty < 1) {
        throw Error(ErrorKind::invalid_argument, "difficulty must be at least 1");
    }
    if (modulus < 2 || modulus > 10) {
        throw Error(ErrorKind::invalid_argument, "modulus must lie in [2, 10] for single-token values");
    }
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(difficulty), static_cast<std::uint64_t>(modulus)}));
    TaskInstance task;
    task.seed = seed;
    task.difficulty = difficulty;
    task.modulus = modulus;
    constexpr int kOps[] = {tok::plus, tok::minus, tok::times};
    task.operands.push_back(static_cast<int>(rng.below(10)));
    for (int i = 0; i < difficulty; ++i) {
        task.operators.push_back(kOps[rng.below(3)]);
        task.operands.push_back(static_cast<int>(rng.below(10)));
    }

    task.prompt_tokens.push_back(tok::bos);
    task.prompt_tokens.push_back(task.operands[0]);
    for (int i = 0; i < difficulty; ++i) {
        task.prompt_tokens.push_back(task.operators[static_cast<std::size_t>(i)]);
        task.prompt_tokens.push_back(task.operands[static_cast<std::size_t>(i) + 1]);
    }
    task.prompt_tokens.push_back(tok::mod);
    for (int d : digits_of(modulus)) task.prompt_tokens.push_back(d);
    task.prompt_tokens.push_back(tok::equals);

    task.gold_answer_tokens = digits_of(running_values(task).back());
    return task;
}

double verify(std::span<const int> answer_tokens, const TaskInstance& task) {
    if (!answer_tokens.empty() && answer_tokens.back() == tok::eos) {
        answer_tokens = answer_tokens.first(answer_tokens.size() - 1);
    }
    if (answer_tokens.empty()) {
        return 0.0;
    }
    return std::equal(answer_tokens.begin(), answer_tokens.end(), task.gold_answer_tokens.begin(),
                      task.gold_answer_tokens.end())
               ? 1.0
               : 0.0;
}

std::vector<int> extract_answer(std::span<const int> explicit_tokens) {
    for (std::size_t i = 0; i < explicit_tokens.size(); ++i) {
        if (explicit_tokens[i] == tok::end_latent) {
            return {explicit_tokens.begin() + static_cast<std::ptrdiff_t>(i) + 1, explicit_tokens.end()};
        }
    }
    return {explicit_tokens.begin(), explicit_tokens.end()};
}

std::uint64_t task_seed(std::uint64_t base_seed, std::uint64_t index, Split split) {
    return (derive_seed(base_seed, {index}) << 1) | static_cast<std::uint64_t>(split);
}

WarmupExample make_warmup_example(const TaskInstance& task) {
    WarmupExample ex;
    ex.task = task;
    ex.chain = running_values(task);
    ex.response = ex.chain;
    ex.response.push_back(tok::end_latent);
    ex.response.insert(ex.response.end(), task.gold_answer_tokens.begin(), task.gold_answer_tokens.end());
    ex.response.push_back(tok::eos);
    return ex;
}

std::vector<WarmupExample> make_warmup_corpus(std::size_t n, int difficulty_min, int difficulty_max,
                                              std::uint64_t seed, Split split, int modulus) {
    if (n == 0) {
        throw Error(ErrorKind::invalid_argument, "warmup corpus needs at least one example");
    }
    if (difficulty_min < 1 || difficulty_max < difficulty_min) {
        throw Error(ErrorKind::invalid_argument, "bad difficulty range");
    }
    const auto span = static_cast<std::uint64_t>(difficulty_max - difficulty_min + 1);
    std::vector<WarmupExample> corpus;
    corpus.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int difficulty = difficulty_min + static_cast<int>(i % span);
        corpus.push_back(make_warmup_example(generate_task(task_seed(seed, i, split), difficulty, modulus)));
    }
    return corpus;
}

std::vector<TaskInstance> make_eval_set(std::size_t n, int difficulty, std::uint64_t seed, int modulus) {
    std::vector<TaskInstance> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(generate_task(task_seed(seed, i, Split::eval), difficulty, modulus));
    }
    return out;
}

void write_corpus(std::ostream& out, std::span<const WarmupExample> corpus) {
    for (const auto& ex : corpus) {
        nlohmann::json j;
        j["seed"] = ex.task.seed;
        j["difficulty"] = ex.task.difficulty;
        j["modulus"] = ex.task.modulus;
        j["prompt"] = ex.task.prompt_tokens;
        j["gold"] = ex.task.gold_answer_tokens;
        out << j.dump() << '\n';
    }
}

std::vector<WarmupExample> read_corpus(std::istream& in) {
    std::vector<WarmupExample> corpus;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            TaskInstance task = generate_task(j.at("seed").get<std::uint64_t>(), j.at("difficulty").get<int>(),
                                              j.value("modulus", 10));
            if (task.prompt_tokens != j.at("prompt").get<std::vector<int>>() ||
                task.gold_answer_tokens != j.at("gold").get<std::vector<int>>()) {
                throw Error(ErrorKind::io, "record does not match its regenerated task");
            }
            corpus.push_back(make_warmup_example(task));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::io, "corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return corpus;
}

}  // namespace lgrpo

// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/config.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "lgrpo/error.hpp"

namespace lgrpo {

namespace {

struct Field {
    std::string section;
    std::string key;
    bool required = false;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
T parse_integer(const std::string& text) {
    const std::string s = trim(text);
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw Error(ErrorKind::config, "'" + s + "' is not a valid integer");
    }
    return v;
}

double parse_real(const std::string& text) {
    const std::string s = trim(text);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw Error(ErrorKind::config, "'" + s + "' is not a valid number");
    return v;
}

std::string real_text(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
Field integer(std::string section, std::string key, T& ref, bool required = false) {
    return {std::move(section), std::move(key), required, [&ref](const std::string& s) { ref = parse_integer<T>(s); },
            [&ref] { return std::to_string(ref); }};
}

Field real(std::string section, std::string key, double& ref) {
    return {std::move(section), std::move(key), false, [&ref](const std::string& s) { ref = parse_real(s); },
            [&ref] { return real_text(ref); }};
}

Field text(std::string section, std::string key, std::string& ref, bool required = false) {
    return {std::move(section), std::move(key), required, [&ref](const std::string& s) { ref = trim(s); },
            [&ref] { return ref; }};
}

Field list(std::string section, std::string key, std::vector<std::string>& ref) {
    return {std::move(section), std::move(key), false, [&ref](const std::string& s) { ref = split_list(s); },
            [&ref] {
                std::string out;
                for (const auto& v : ref) out += (out.empty() ? "" : ",") + v;
                return out;
            }};
}

Field seed_list(std::string section, std::string key, std::vector<std::uint64_t>& ref) {
    return {std::move(section), std::move(key), false,
            [&ref](const std::string& s) {
                ref.clear();
                for (const auto& item : split_list(s)) ref.push_back(parse_integer<std::uint64_t>(item));
            },
            [&ref] {
                std::string out;
                for (auto v : ref) out += (out.empty() ? "" : ",") + std::to_string(v);
                return out;
            }};
}

Field optimizer_kind(OptimizerKind& ref) {
    return {"rl", "optimizer", false,
            [&ref](const std::string& s) {
                const std::string v = trim(s);
                if (v == "sgd") {
                    ref = OptimizerKind::sgd;
                } else if (v == "adam") {
                    ref = OptimizerKind::adam;
                } else {
                    throw Error(ErrorKind::config, "optimizer must be sgd or adam, got '" + v + "'");
                }
            },
            [&ref] { return std::string(ref == OptimizerKind::sgd ? "sgd" : "adam"); }};
}

std::vector<Field> fields(RunConfig& c) {
    RlConfig& rl = c.rl;
    WarmupConfig& w = c.warmup;
    NoiseConfig& noise = rl.latent.noise;
    return {
        text("run", "name", c.name, true),
        integer("run", "seed", c.seed, true),

        integer("model", "vocab", c.model.vocab),
        integer("model", "dim", c.model.dim),
        integer("model", "layers", c.model.layers),
        integer("model", "mlp_hidden", c.model.mlp_hidden),
        integer("model", "max_positions", c.model.max_positions),

        integer("task", "modulus", rl.modulus),
        integer("task", "train_difficulty_min", rl.train_difficulty_min),
        integer("task", "train_difficulty_max", rl.train_difficulty_max),
        integer("task", "eval_difficulty", rl.eval_difficulty),
        integer("task", "eval_size", rl.eval_size),
        integer("task", "eval_seed", rl.eval_seed),

        integer("latent", "k", rl.latent.k),
        real("latent", "tau", noise.tau),
        real("latent", "a", noise.bounds.a),
        real("latent", "b", noise.bounds.b),
        real("latent", "delta", noise.bounds.delta),
        real("latent", "noise_scale", noise.noise_scale),
        integer("latent", "t_lat_max", rl.limits.t_lat_max),
        integer("latent", "l_max", rl.limits.l_max),

        integer("warmup", "corpus_size", w.corpus_size),
        integer("warmup", "difficulty_min", w.difficulty_min),
        integer("warmup", "difficulty_max", w.difficulty_max),
        integer("warmup", "stage1_epochs", w.stage1_epochs),
        integer("warmup", "stage2_epochs", w.stage2_epochs),
        integer("warmup", "batch_size", w.batch_size),
        real("warmup", "learning_rate", w.learning_rate),
        real("warmup", "chain_weight", w.chain_weight),
        real("warmup", "noise_scale", w.noise_scale),
        real("warmup", "gate_threshold", w.gate_threshold),
        integer("warmup", "gate_difficulty", w.gate_difficulty),
        integer("warmup", "gate_size", w.gate_size),

        text("rl", "algorithm", c.algorithm),
        list("rl", "ablate", c.ablations),
        text("rl", "warmup_checkpoint", c.warmup_checkpoint),
        integer("rl", "group_size", rl.group_size),
        real("rl", "clip_eps", rl.loss.clip_eps),
        real("rl", "kl_coeff", rl.loss.kl_coeff),
        integer("rl", "ppo_epochs", rl.ppo_epochs),
        integer("rl", "batch_size", rl.batch_size),
        optimizer_kind(rl.optimizer.kind),
        real("rl", "learning_rate", rl.optimizer.learning_rate),
        real("rl", "grad_clip", rl.optimizer.grad_clip),
        integer("rl", "total_steps", rl.total_steps),
        integer("rl", "eval_interval", rl.eval_interval),
        integer("rl", "checkpoint_interval", rl.checkpoint_interval),

        list("sweep", "variants", c.sweep.variants),
        seed_list("sweep", "seeds", c.sweep.seeds),
    };
}

void check(const RunConfig& c) {
    validate(c.warmup);
    validate(c.rl);
    if (c.name.empty()) throw Error(ErrorKind::config, "run.name must not be empty");
    if (c.name.find_first_of("/ \t") != std::string::npos) {
        throw Error(ErrorKind::config, "run.name must not contain '/' or whitespace");
    }
    PolicyParams probe(c.model);
    if (c.model.vocab < static_cast<std::size_t>(tok::eos) + 1) {
        throw Error(ErrorKind::config, "model.vocab is too small for the task tokens");
    }
    if (c.rl.latent.k == 0 || c.rl.latent.k >= c.model.vocab) {
        throw Error(ErrorKind::config, "latent.k must lie in [1, vocab - 1]");
    }
    const int max_difficulty = std::max({c.rl.train_difficulty_max, c.rl.eval_difficulty, c.warmup.difficulty_max,
                                         c.warmup.gate_difficulty});
    // bos, operands and operators, mod, modulus digits, "=".
    const std::size_t longest_prompt = 2 + 2 * static_cast<std::size_t>(max_difficulty) + 1 + 2 + 1;
    if (longest_prompt + c.rl.limits.l_max > c.model.max_positions + 1) {
        throw Error(ErrorKind::config, "model.max_positions is too small for the longest prompt plus latent.l_max");
    }
    if (c.rl.modulus < 2 || c.rl.modulus > 10) throw Error(ErrorKind::config, "task.modulus must lie in [2, 10]");
    parse_variant(c.algorithm);
    for (const auto& a : c.ablations) {
        AlgorithmSwitches s;
        apply_ablation(s, a);
    }
    for (const auto& v : c.sweep.variants) parse_variant(v);
    if (c.sweep.seeds.empty()) throw Error(ErrorKind::config, "sweep.seeds must not be empty");
}

}  // namespace

RunConfig parse_config(const std::string& text_in) {
    boost::property_tree::ptree tree;
    std::istringstream in(text_in);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw Error(ErrorKind::config, std::string("malformed config: ") + e.message() + " (line " +
                                           std::to_string(e.line()) + ")");
    }

    RunConfig config;
    std::vector<Field> table = fields(config);
    std::vector<std::string> problems;
    std::set<std::string> seen;
    std::set<std::string> sections;
    for (const Field& f : table) sections.insert(f.section);

    for (const auto& [section, body] : tree) {
        if (!sections.count(section)) {
            problems.push_back("unknown section [" + section + "]");
            continue;
        }
        if (body.empty() && !body.data().empty()) {
            problems.push_back("key '" + section + "' appears outside any section");
            continue;
        }
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            const auto it = std::find_if(table.begin(), table.end(),
                                         [&](const Field& f) { return f.section == section && f.key == key; });
            if (it == table.end()) {
                problems.push_back("unknown key " + full);
                continue;
            }
            try {
                it->set(value.data());
                seen.insert(full);
            } catch (const Error& e) {
                problems.push_back(full + ": " + e.what());
            }
        }
    }
    for (const Field& f : table) {
        if (f.required && !seen.count(f.section + "." + f.key)) {
            problems.push_back("missing required key " + f.section + "." + f.key);
        }
    }
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw Error(ErrorKind::config, msg);
    }
    config.rl.seed = config.seed;
    check(config);
    return config;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::config, "cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string to_ini(const RunConfig& config_in) {
    RunConfig copy = config_in;
    std::ostringstream out;
    std::string section;
    for (const Field& f : fields(copy)) {
        if (f.section != section) {
            if (!section.empty()) out << '\n';
            section = f.section;
            out << '[' << section << "]\n";
        }
        out << f.key << " = " << f.get() << '\n';
    }
    return out.str();
}

std::string config_hash(const RunConfig& config) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : to_ini(config)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Variant parse_variant(const std::string& name) {
    Variant v;
    const auto dash = name.find('-');
    v.algorithm = parse_algorithm(name.substr(0, dash));
    if (dash != std::string::npos) {
        std::stringstream ss(name.substr(dash + 1));
        std::string item;
        while (std::getline(ss, item, '-')) {
            AlgorithmSwitches probe;
            apply_ablation(probe, item);
            v.ablations.push_back(item);
        }
    }
    return v;
}

AlgorithmSwitches switches_for(const RunConfig& config) {
    const Variant v = parse_variant(config.algorithm);
    AlgorithmSwitches s = preset(v.algorithm);
    for (const auto& a : v.ablations) apply_ablation(s, a);
    for (const auto& a : config.ablations) apply_ablation(s, a);
    return s;
}

}  // namespace lgrpo

// SPDX-License-Identifier: Apache-2.0
//
// lgrpo: warmup, train, eval, verify-gradients and sweep.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lgrpo/audit.hpp"
#include "lgrpo/checkpoint.hpp"
#include "lgrpo/config.hpp"
#include "lgrpo/error.hpp"
#include "lgrpo/evaluate.hpp"
#include "lgrpo/task_env.hpp"
#include "lgrpo/trainer.hpp"
#include "lgrpo/warmup.hpp"

#ifndef LGRPO_VERSION
#define LGRPO_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace lgrpo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitGate = 2;

fs::path output_root() {
    if (const char* env = std::getenv("LGRPO_OUTPUT_ROOT"); env != nullptr && *env != '\0') return env;
    return "runs";
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(ErrorKind::io, "cannot write " + tmp.string());
        f << text;
    }
    fs::rename(tmp, path);
}

struct Manifest {
    std::string run_id;
    const RunConfig* config = nullptr;
    nlohmann::json artifacts = nlohmann::json::object();
    std::string started_at;
    std::string finished_at;

    void write(const fs::path& path) const {
        nlohmann::json j;
        j["run_id"] = run_id;
        j["seed"] = config->seed;
        j["config_hash"] = config_hash(*config);
        j["config"] = to_ini(*config);
        j["code_version"] = LGRPO_VERSION;
        j["artifacts"] = artifacts;
        j["started_at"] = started_at;
        j["finished_at"] = finished_at.empty() ? nlohmann::json(nullptr) : nlohmann::json(finished_at);
        write_text(path, j.dump(2) + "\n");
    }
};

std::string variant_name(const RunConfig& cfg) {
    std::string v = cfg.algorithm;
    for (const auto& a : cfg.ablations) v += "-" + a;
    return v;
}

std::string run_id_for(const RunConfig& cfg) {
    return cfg.name + "." + variant_name(cfg) + ".s" + std::to_string(cfg.seed);
}

// ---------------------------------------------------------------------------
// warmup

int cmd_warmup(const std::string& config_path) {
    const RunConfig cfg = load_config(config_path);
    const fs::path dir = output_root() / cfg.name;
    Manifest manifest{cfg.name + ".warmup", &cfg, nlohmann::json::object(), utc_now(), {}};

    const WarmupConfig& w = cfg.warmup;
    const std::vector<WarmupExample> corpus =
        make_warmup_corpus(w.corpus_size, w.difficulty_min, w.difficulty_max, cfg.seed, Split::train, cfg.rl.modulus);
    const std::vector<TaskInstance> gate =
        make_eval_set(w.gate_size, w.gate_difficulty, cfg.rl.eval_seed, cfg.rl.modulus);

    fs::create_directories(dir);
    {
        std::ostringstream out;
        write_corpus(out, corpus);
        write_text(dir / "warmup_corpus.jsonl", out.str());
    }

    WarmupReport report;
    const PolicyParams params =
        run_warmup(cfg.model, w, corpus, gate, cfg.rl.limits, cfg.rl.latent, cfg.seed, report,
                   [](const WarmupEpoch& e) {
                       std::cerr << "warmup stage " << e.stage << " epoch " << e.epoch << " loss " << e.loss << "\n";
                   });

    Checkpoint ckpt;
    ckpt.stage = "warmup";
    ckpt.config_hash = config_hash(cfg);
    ckpt.policy = params;
    const fs::path ckpt_path = dir / "warmup.ckpt";
    save_checkpoint(ckpt_path.string(), ckpt);
    write_text(dir / "warmup_report.json", report.to_json_line() + "\n");

    manifest.artifacts["checkpoint"] = ckpt_path.string();
    manifest.artifacts["corpus"] = (dir / "warmup_corpus.jsonl").string();
    manifest.artifacts["report"] = (dir / "warmup_report.json").string();
    manifest.finished_at = utc_now();
    manifest.write(dir / "warmup_manifest.json");

    std::cout << report.to_json_line() << "\n";
    if (!report.gate_passed) {
        std::cerr << "warmup gate not met: latent pass@1 " << report.gate_pass_at_1 << " on difficulty "
                  << w.gate_difficulty << " (threshold " << w.gate_threshold << ", marker rate "
                  << report.marker_rate << ", explicit pass@1 after stage 1 " << report.explicit_pass_at_1 << ")\n";
        return kExitGate;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainRequest {
    std::string init_path;
    bool resume = false;
    std::optional<std::uint64_t> max_steps;
    bool quiet = false;
};

struct TrainOutcome {
    std::string run_id;
    std::optional<double> initial_pass_at_1;
    std::optional<double> initial_length;
    std::optional<double> final_pass_at_1;
    std::optional<double> final_length;
    double peak_pass_at_1 = 0.0;
    double min_valid_fraction = 1.0;
    bool finished = false;
};

PolicyParams initial_policy(const RunConfig& cfg, const AlgorithmSwitches& switches, const std::string& init_path) {
    std::string path = init_path.empty() ? cfg.warmup_checkpoint : init_path;
    if (path.empty()) {
        if (is_latent(switches.rollout_mode)) {
            throw Error(ErrorKind::config,
                        "latent algorithms start from a warmup checkpoint; set rl.warmup_checkpoint or pass --init");
        }
        return PolicyParams::init(cfg.model, cfg.seed);
    }
    if (!fs::exists(path) && fs::path(path).is_relative() && fs::exists(output_root() / path)) {
        path = (output_root() / path).string();
    }
    Checkpoint ckpt = load_checkpoint(path);
    if (!(ckpt.policy.config() == cfg.model)) {
        throw Error(ErrorKind::config, "checkpoint " + path + " was trained with a different [model] section");
    }
    ckpt.policy.set_version(0);
    return ckpt.policy;
}

// Keeps the metric lines of steps before `next_step`.
void truncate_metrics(const fs::path& path, std::uint64_t next_step) {
    std::ifstream in(path);
    std::string kept;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("step") || j.value("final", false)) continue;
        if (j["step"].get<std::uint64_t>() < next_step) kept += line + "\n";
    }
    in.close();
    write_text(path, kept);
}

TrainOutcome run_training(const RunConfig& cfg, const TrainRequest& req) {
    const AlgorithmSwitches switches = switches_for(cfg);
    const std::string run_id = run_id_for(cfg);
    const fs::path dir = output_root() / run_id;
    const fs::path ckpt_path = dir / "train.ckpt";
    const fs::path metrics_path = dir / "metrics.jsonl";
    const std::string hash = config_hash(cfg);

    TrainState state;
    if (req.resume) {
        const Checkpoint ckpt = load_checkpoint(ckpt_path.string());
        if (ckpt.config_hash != hash) {
            throw Error(ErrorKind::config, "cannot resume " + run_id + ": config hash " + hash +
                                               " differs from checkpoint hash " + ckpt.config_hash);
        }
        if (!ckpt.reference) throw Error(ErrorKind::io, "training checkpoint lacks the reference policy");
        state.policy = ckpt.policy;
        state.reference = *ckpt.reference;
        state.optimizer = ckpt.optimizer;
        state.next_step = ckpt.step;
        if (auto it = ckpt.meta.find("consecutive_skips"); it != ckpt.meta.end()) {
            state.consecutive_skips = std::stoul(it->second);
        }
        truncate_metrics(metrics_path, state.next_step);
    } else {
        state = start_training(initial_policy(cfg, switches, req.init_path));
        fs::create_directories(dir);
        write_text(metrics_path, "");
    }

    Manifest manifest{run_id, &cfg, nlohmann::json::object(), utc_now(), {}};
    manifest.artifacts["metrics"] = metrics_path.string();
    manifest.artifacts["checkpoint"] = ckpt_path.string();
    manifest.artifacts["final"] = (dir / "final.json").string();
    manifest.write(dir / "manifest.json");

    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw Error(ErrorKind::io, "cannot append to " + metrics_path.string());

    TrainOutcome outcome;
    outcome.run_id = run_id;
    TrainHooks hooks;
    hooks.on_step = [&](const StepMetrics& m) {
        metrics << m.to_json_line(run_id) << "\n" << std::flush;
        if (m.pass_at_1) {
            if (!outcome.initial_pass_at_1) {
                outcome.initial_pass_at_1 = m.pass_at_1;
                outcome.initial_length = m.eval_mean_length;
            }
            outcome.peak_pass_at_1 = std::max(outcome.peak_pass_at_1, *m.pass_at_1);
        }
        outcome.min_valid_fraction = std::min(outcome.min_valid_fraction, m.valid_fraction);
        if (!req.quiet) {
            std::cerr << run_id << " step " << m.step << " reward " << m.mean_reward << " valid "
                      << m.valid_fraction << " loss " << m.loss;
            if (m.pass_at_1) std::cerr << " pass@1 " << *m.pass_at_1;
            std::cerr << "\n";
        }
    };
    hooks.on_checkpoint = [&](const TrainState& s) {
        Checkpoint ckpt;
        ckpt.stage = "train";
        ckpt.algorithm = variant_name(cfg);
        ckpt.step = s.next_step;
        ckpt.config_hash = hash;
        ckpt.policy = s.policy;
        ckpt.reference = s.reference;
        ckpt.optimizer = s.optimizer;
        ckpt.meta["consecutive_skips"] = std::to_string(s.consecutive_skips);
        save_checkpoint(ckpt_path.string(), ckpt);
    };
    hooks.on_final = [&](const TrainState& s, const EvalReport& r) {
        nlohmann::json j;
        j["run_id"] = run_id;
        j["final"] = true;
        j["step"] = s.next_step;
        j["pass_at_1"] = r.pass_at_1;
        j["eval_mean_length"] = r.mean_length;
        j["marker_rate"] = r.marker_rate;
        j["terminated_rate"] = r.terminated_rate;
        metrics << j.dump() << "\n" << std::flush;
        write_text(dir / "final.json", j.dump() + "\n");
        outcome.final_pass_at_1 = r.pass_at_1;
        outcome.final_length = r.mean_length;
        outcome.peak_pass_at_1 = std::max(outcome.peak_pass_at_1, r.pass_at_1);
        outcome.finished = true;
    };

    train(state, cfg.rl, switches, hooks, req.max_steps);
    manifest.finished_at = utc_now();
    manifest.write(dir / "manifest.json");
    return outcome;
}

// ---------------------------------------------------------------------------
// eval

RolloutMode parse_eval_mode(const std::string& s) {
    if (s == "no-sampling") return RolloutMode::latent_deterministic;
    if (s == "sampled") return RolloutMode::latent_sampled_inference;
    if (s == "explicit-greedy") return RolloutMode::explicit_greedy;
    if (s == "explicit-sampled") return RolloutMode::explicit_sampled;
    throw Error(ErrorKind::config,
                "unknown mode '" + s + "'; valid choices: no-sampling, sampled, explicit-greedy, explicit-sampled");
}

struct EvalRequest {
    std::string checkpoint;
    std::string config_path;
    std::string mode = "no-sampling";
    std::size_t k = 1;
    std::size_t n = 1;
    std::optional<double> noise;
    std::optional<int> difficulty;
    std::optional<std::size_t> prompts;
    std::uint64_t seed = 0;
    bool per_prompt = false;
    std::string output;
};

int cmd_eval(const EvalRequest& req) {
    RlConfig rl;
    if (!req.config_path.empty()) rl = load_config(req.config_path).rl;
    if (req.k < 1 || req.k > req.n) {
        throw Error(ErrorKind::invalid_argument,
                    "--k must lie in [1, --n] (k=" + std::to_string(req.k) + ", n=" + std::to_string(req.n) + ")");
    }
    const Checkpoint ckpt = load_checkpoint(req.checkpoint);
    const int difficulty = req.difficulty.value_or(rl.eval_difficulty);
    const std::size_t prompts = req.prompts.value_or(rl.eval_size);
    const std::vector<TaskInstance> tasks = make_eval_set(prompts, difficulty, rl.eval_seed, rl.modulus);

    EvalOptions opts;
    opts.mode = parse_eval_mode(req.mode);
    opts.n = req.n;
    opts.ks = k_curve(req.n);
    if (std::find(opts.ks.begin(), opts.ks.end(), req.k) == opts.ks.end()) {
        opts.ks.push_back(req.k);
        std::sort(opts.ks.begin(), opts.ks.end());
    }
    opts.limits = rl.limits;
    opts.latent = rl.latent;
    if (req.noise) opts.latent.noise.noise_scale = *req.noise;
    validate(opts.latent.noise);
    opts.seed = req.seed;

    const EvalReport report = evaluate(ckpt.policy, tasks, opts);
    auto j = nlohmann::json::parse(report.to_json_line(req.per_prompt));
    j["checkpoint"] = req.checkpoint;
    j["difficulty"] = difficulty;
    j["noise"] = opts.latent.noise.noise_scale;
    j["seed"] = req.seed;
    const std::string line = j.dump();
    std::cout << line << "\n";
    if (!req.output.empty()) write_text(req.output, line + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------
// verify-gradients

int cmd_verify(std::size_t trials, std::uint64_t seed, const std::string& fault_name, const std::string& report_path) {
    if (trials == 0) throw Error(ErrorKind::invalid_argument, "--trials must be at least 1");
    AuditFault fault = AuditFault::none;
    if (fault_name == "sign") {
        fault = AuditFault::flipped_branch_sign;
    } else if (!fault_name.empty()) {
        throw Error(ErrorKind::invalid_argument, "unknown fault '" + fault_name + "'");
    }
    std::ofstream report;
    if (!report_path.empty()) {
        report.open(report_path, std::ios::trunc);
        if (!report) throw Error(ErrorKind::io, "cannot write " + report_path);
    }
    std::string first_failure;
    const AuditSummary s = run_gradient_audit(trials, seed, fault, [&](std::size_t t, const GradientReport& r) {
        if (report.is_open()) report << r.to_json_line() << "\n";
        if (!r.passed() && first_failure.empty()) {
            first_failure = "trial " + std::to_string(t) + " (" + to_string(r.mode) + "): " + r.worst_identity;
        }
    });
    std::cout << s.to_json_line() << "\n";
    if (!s.passed()) {
        std::cerr << "gradient identity failed: " << s.worst_identity << " (max relative error " << s.max_rel_error
                  << "); first failure at " << first_failure << "\n";
        return kExitGate;
    }
    if (!s.aligned()) {
        std::cerr << "alignment property failed: " << s.one_sided_aligned << "/" << s.trials
                  << " one-sided trials aligned, " << s.two_sided_witnesses << "/" << s.crossed_trials
                  << " crossed trials with a two-sided witness\n";
        return kExitGate;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& variants_override,
              const std::vector<std::uint64_t>& seeds_override, bool quiet) {
    const RunConfig base = load_config(config_path);
    const std::vector<std::string> variants = variants_override.empty() ? base.sweep.variants : variants_override;
    const std::vector<std::uint64_t> seeds = seeds_override.empty() ? base.sweep.seeds : seeds_override;
    for (const auto& v : variants) parse_variant(v);

    const fs::path summary_path = output_root() / base.name / "sweep.jsonl";
    std::string summary;
    for (const auto& v : variants) {
        std::vector<double> finals;
        std::vector<double> gains;
        for (std::uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.algorithm = v;
            cfg.ablations.clear();
            cfg.seed = seed;
            cfg.rl.seed = seed;
            TrainRequest req;
            req.quiet = quiet;
            const TrainOutcome o = run_training(cfg, req);
            nlohmann::json j;
            j["variant"] = v;
            j["seed"] = seed;
            j["run_id"] = o.run_id;
            j["initial_pass_at_1"] = o.initial_pass_at_1.value_or(0.0);
            j["final_pass_at_1"] = o.final_pass_at_1.value_or(0.0);
            j["peak_pass_at_1"] = o.peak_pass_at_1;
            j["min_valid_fraction"] = o.min_valid_fraction;
            j["initial_length"] = o.initial_length.value_or(0.0);
            j["final_length"] = o.final_length.value_or(0.0);
            summary += j.dump() + "\n";
            std::cout << j.dump() << "\n";
            finals.push_back(o.final_pass_at_1.value_or(0.0));
            gains.push_back(o.final_pass_at_1.value_or(0.0) - o.initial_pass_at_1.value_or(0.0));
        }
        nlohmann::json agg;
        agg["variant"] = v;
        agg["seeds"] = seeds;
        agg["median_final_pass_at_1"] = median(finals);
        agg["median_gain"] = median(gains);
        summary += agg.dump() + "\n";
        std::cout << agg.dump() << "\n";
    }
    write_text(summary_path, summary);
    return kExitOk;
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::gate_failure: return kExitGate;
        default: return kExitUsage;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-GRPO laboratory on synthetic arithmetic chains"};
    app.require_subcommand(1);

    std::string config_path;

    auto* warmup = app.add_subcommand("warmup", "Supervised warmup; writes a checkpoint and checks the RL gate");
    warmup->add_option("--config", config_path, "INI config file")->required();

    std::string algorithm;
    std::vector<std::string> ablations;
    TrainRequest train_req;
    std::uint64_t max_steps = 0;
    std::optional<std::uint64_t> seed_override;
    auto* train_cmd = app.add_subcommand("train", "RL training from a warmup checkpoint");
    train_cmd->add_option("--config", config_path, "INI config file")->required();
    train_cmd->add_option("--algorithm", algorithm, "latent_grpo, soft_grpo or explicit_grpo");
    train_cmd->add_option("--ablate", ablations, "switch to disable: one_sided, invalid_mask, first_token_selection");
    train_cmd->add_option("--init", train_req.init_path, "initial checkpoint (overrides rl.warmup_checkpoint)");
    train_cmd->add_option("--seed", seed_override, "override run.seed");
    train_cmd->add_flag("--resume", train_req.resume, "continue from the run's last checkpoint");
    auto* max_steps_opt =
        train_cmd->add_option("--max-steps", max_steps, "stop after this many completed steps (checkpointed)");
    train_cmd->add_flag("--quiet", train_req.quiet, "no per-step progress on stderr");

    EvalRequest eval_req;
    std::optional<double> noise;
    std::optional<int> difficulty;
    std::optional<std::size_t> prompts;
    auto* eval_cmd = app.add_subcommand("eval", "Held-out pass@1, pass@k and #L for a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_req.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--config", eval_req.config_path, "INI config for task and latent settings");
    eval_cmd->add_option("--mode", eval_req.mode, "no-sampling, sampled, explicit-greedy or explicit-sampled");
    eval_cmd->add_option("--k", eval_req.k, "k for pass@k");
    eval_cmd->add_option("--n", eval_req.n, "samples per prompt");
    eval_cmd->add_option("--noise", noise, "Gumbel noise scale for sampled mode");
    eval_cmd->add_option("--difficulty", difficulty, "task difficulty");
    eval_cmd->add_option("--prompts", prompts, "number of held-out prompts");
    eval_cmd->add_option("--seed", eval_req.seed, "sampling seed");
    eval_cmd->add_flag("--per-prompt", eval_req.per_prompt, "include per-prompt outcomes");
    eval_cmd->add_option("--output", eval_req.output, "also write the report to this file");

    std::size_t trials = 200;
    std::uint64_t verify_seed = 0;
    std::string fault;
    std::string report_path;
    auto* verify = app.add_subcommand("verify-gradients", "Check the latent-step gradient identities");
    verify->add_option("--trials", trials, "randomised instances");
    verify->add_option("--seed", verify_seed, "audit seed");
    verify->add_option("--report", report_path, "write every per-instance report as JSON lines");
    verify->add_option("--inject-fault", fault, "")->group("");

    std::vector<std::string> variants;
    std::vector<std::uint64_t> seeds;
    bool sweep_quiet = false;
    auto* sweep = app.add_subcommand("sweep", "Train every variant for every seed and summarise");
    sweep->add_option("--config", config_path, "INI config file")->required();
    sweep->add_option("--variants", variants, "variants, e.g. latent_grpo latent_grpo-one_sided");
    sweep->add_option("--seeds", seeds, "seeds");
    sweep->add_flag("--quiet", sweep_quiet, "no per-step progress on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*warmup) return cmd_warmup(config_path);
        if (*train_cmd) {
            RunConfig cfg = load_config(config_path);
            if (!algorithm.empty()) {
                parse_variant(algorithm);
                cfg.algorithm = algorithm;
            }
            for (const auto& a : ablations) {
                AlgorithmSwitches probe;
                apply_ablation(probe, a);
                cfg.ablations.push_back(a);
            }
            if (seed_override) {
                cfg.seed = *seed_override;
                cfg.rl.seed = *seed_override;
            }
            if (max_steps_opt->count() > 0) train_req.max_steps = max_steps;
            const TrainOutcome o = run_training(cfg, train_req);
            nlohmann::json j;
            j["run_id"] = o.run_id;
            j["finished"] = o.finished;
            j["final_pass_at_1"] = o.final_pass_at_1 ? nlohmann::json(*o.final_pass_at_1) : nlohmann::json(nullptr);
            std::cout << j.dump() << "\n";
            return kExitOk;
        }
        if (*eval_cmd) {
            eval_req.noise = noise;
            eval_req.difficulty = difficulty;
            eval_req.prompts = prompts;
            return cmd_eval(eval_req);
        }
        if (*verify) return cmd_verify(trials, verify_seed, fault, report_path);
        if (*sweep) return cmd_sweep(config_path, variants, seeds, sweep_quiet);
    } catch (const Error& e) {
        std::cerr << "lgrpo: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "lgrpo: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

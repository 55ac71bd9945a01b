// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/policy.hpp"

#include <cmath>
#include <random>

#include "lgrpo/error.hpp"

namespace lgrpo {

PolicyParams::PolicyParams(const ModelConfig& config) : config_(config) {
    if (config.vocab == 0 || config.dim == 0 || config.layers == 0 || config.mlp_hidden == 0 ||
        config.max_positions == 0) {
        throw Error(ErrorKind::config, "model dimensions must be positive");
    }
    std::size_t offset = 0;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
        layout_.push_back({std::move(name), offset, rows, cols});
        offset += rows * cols;
    };
    const std::size_t d = config.dim;
    add("token_embedding", config.vocab, d);
    add("position_embedding", config.max_positions, d);
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        add(p + "wq", d, d);
        add(p + "wk", d, d);
        add(p + "wv", d, d);
        add(p + "wo", d, d);
        add(p + "w1", d, config.mlp_hidden);
        add(p + "b1", 1, config.mlp_hidden);
        add(p + "w2", config.mlp_hidden, d);
        add(p + "b2", 1, d);
    }
    add("head.weight", d, config.vocab);
    add("head.bias", 1, config.vocab);
    values_.assign(offset, 0.0);
}

PolicyParams PolicyParams::init(const ModelConfig& config, std::uint64_t seed) {
    PolicyParams p(config);
    std::mt19937_64 engine(derive_seed(seed, {0x1417}));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double d = static_cast<double>(config.dim);
    for (std::size_t s = 0; s < p.layout_.size(); ++s) {
        const TensorSlot& slot = p.layout_[s];
        double stddev = 1.0 / std::sqrt(static_cast<double>(slot.rows));
        if (s == kTokenEmbedding || s == kPositionEmbedding) {
            stddev = 1.0 / std::sqrt(d);
        }
        if (slot.rows == 1) {
            stddev = 0.0;  // biases
        }
        const bool residual_out = slot.name.ends_with(".wo") || slot.name.ends_with(".w2");
        if (residual_out) {
            stddev *= 0.5;
        }
        for (double& v : p.tensor(s)) {
            v = stddev * normal(engine);
        }
    }
    return p;
}

std::span<const double> PolicyParams::tensor(std::size_t slot) const {
    const TensorSlot& s = layout_.at(slot);
    return std::span<const double>(values_).subspan(s.offset, s.size());
}

std::span<double> PolicyParams::tensor(std::size_t slot) {
    const TensorSlot& s = layout_.at(slot);
    return std::span<double>(values_).subspan(s.offset, s.size());
}

std::size_t PolicyParams::slot_index(const std::string& name) const {
    for (std::size_t i = 0; i < layout_.size(); ++i) {
        if (layout_[i].name == name) return i;
    }
    throw Error(ErrorKind::invalid_argument, "no parameter tensor named " + name);
}

EmbeddingView PolicyParams::embeddings() const {
    return EmbeddingView{tensor(kTokenEmbedding), config_.vocab, config_.dim};
}

bool PolicyParams::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

FrozenParams snapshot(const PolicyParams& params) { return std::make_shared<const PolicyParams>(params); }

ParamLeaves bind_params(const PolicyParams& params, ad::Tape& tape, bool requires_grad) {
    ParamLeaves leaves;
    leaves.tensors.reserve(params.layout().size());
    for (std::size_t s = 0; s < params.layout().size(); ++s) {
        const TensorSlot& slot = params.layout()[s];
        leaves.tensors.push_back(tape.leaf({slot.rows, slot.cols}, params.tensor(s), requires_grad));
    }
    return leaves;
}

void accumulate_gradients(const PolicyParams& params, const ParamLeaves& leaves, std::span<double> grads) {
    if (grads.size() != params.size()) {
        throw Error(ErrorKind::shape_mismatch, "gradient buffer does not match parameter count");
    }
    for (std::size_t s = 0; s < leaves.tensors.size(); ++s) {
        const ad::Value& leaf = leaves.tensors[s];
        if (!leaf.requires_grad()) continue;
        const std::vector<double> g = leaf.grad();
        const std::size_t off = params.layout()[s].offset;
        for (std::size_t i = 0; i < g.size(); ++i) grads[off + i] += g[i];
    }
}

namespace {

// Rows of the token table for a run of consecutive token positions.
ad::Value embed_tokens(const ad::Value& table, std::span<const int> ids, std::size_t vocab, std::size_t dim) {
    std::vector<std::size_t> idx;
    idx.reserve(ids.size() * dim);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw Error(ErrorKind::invalid_argument, "token id " + std::to_string(id) + " outside vocabulary");
        }
        for (std::size_t j = 0; j < dim; ++j) idx.push_back(static_cast<std::size_t>(id) * dim + j);
    }
    return ad::gather(table, std::move(idx), {ids.size(), dim});
}

}  // namespace

SequenceOutput forward_sequence(const PolicyParams& params, const ParamLeaves& leaves,
                                std::span<const InputElement> inputs) {
    const ModelConfig& cfg = params.config();
    const std::size_t T = inputs.size();
    if (T == 0) {
        throw Error(ErrorKind::invalid_argument, "forward needs a non-empty prefix");
    }
    if (T > cfg.max_positions) {
        throw Error(ErrorKind::invalid_argument, "sequence of " + std::to_string(T) + " exceeds max_positions " +
                                                     std::to_string(cfg.max_positions));
    }
    ad::Tape& tape = *leaves.tensors.front().tape();
    const std::size_t d = cfg.dim;
    const auto& W = leaves.tensors;

    SequenceOutput out;
    std::vector<ad::Value> parts;
    std::size_t i = 0;
    while (i < T) {
        if (std::holds_alternative<TokenId>(inputs[i])) {
            std::vector<int> run;
            while (i < T && std::holds_alternative<TokenId>(inputs[i])) {
                run.push_back(std::get<TokenId>(inputs[i]));
                ++i;
            }
            parts.push_back(embed_tokens(W[PolicyParams::kTokenEmbedding], run, cfg.vocab, d));
        } else {
            const LatentVector& v = std::get<LatentVector>(inputs[i]);
            if (v.size() != d) {
                throw Error(ErrorKind::shape_mismatch, "latent input has dimension " + std::to_string(v.size()));
            }
            ad::Value c = tape.row(v);
            out.latent_inputs.push_back(c);
            parts.push_back(c);
            ++i;
        }
    }
    ad::Value x = parts.size() == 1 ? parts.front() : ad::concat_rows(parts);

    std::vector<std::size_t> pos_idx(T * d);
    for (std::size_t k = 0; k < T * d; ++k) pos_idx[k] = k;
    x = x + ad::gather(W[PolicyParams::kPositionEmbedding], std::move(pos_idx), {T, d});

    std::vector<double> mask(T * T, 0.0);
    for (std::size_t r = 0; r < T; ++r) {
        for (std::size_t c = r + 1; c < T; ++c) mask[r * T + c] = -1e9;
    }
    const ad::Value causal = tape.constant({T, T}, std::move(mask));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto& wq = W[params.layer_slot(l, 0)];
        const auto& wk = W[params.layer_slot(l, 1)];
        const auto& wv = W[params.layer_slot(l, 2)];
        const auto& wo = W[params.layer_slot(l, 3)];
        const auto& w1 = W[params.layer_slot(l, 4)];
        const auto& b1 = W[params.layer_slot(l, 5)];
        const auto& w2 = W[params.layer_slot(l, 6)];
        const auto& b2 = W[params.layer_slot(l, 7)];

        const ad::Value h = ad::rms_norm(x);
        const ad::Value q = ad::matmul(h, wq);
        const ad::Value k = ad::matmul(h, wk);
        const ad::Value v = ad::matmul(h, wv);
        const ad::Value att = ad::softmax(ad::scale(ad::matmul_nt(q, k), inv_sqrt_d) + causal);
        x = x + ad::matmul(ad::matmul(att, v), wo);

        const ad::Value h2 = ad::rms_norm(x);
        x = x + ad::matmul(ad::relu(ad::matmul(h2, w1) + b1), w2) + b2;
    }
    out.logits = ad::matmul(ad::rms_norm(x), W[params.head_weight_slot()]) + W[params.head_bias_slot()];
    return out;
}

std::vector<double> forward(const PolicyParams& params, std::span<const InputElement> prefix) {
    ad::Tape tape;
    const ParamLeaves leaves = bind_params(params, tape, false);
    const SequenceOutput out = forward_sequence(params, leaves, prefix);
    const auto all = out.logits.data();
    const std::size_t V = params.config().vocab;
    return std::vector<double>(all.end() - static_cast<std::ptrdiff_t>(V), all.end());
}

// ---------------------------------------------------------------------------

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

bool optimizer_step(PolicyParams& params, std::span<const double> grads, const OptimizerConfig& config,
                    OptimizerState& state) {
    if (grads.size() != params.size()) {
        throw Error(ErrorKind::shape_mismatch, "gradient size does not match parameters");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            ++state.skipped;
            return false;
        }
    }
    double factor = 1.0;
    if (config.grad_clip > 0.0) {
        const double norm = l2_norm(grads);
        if (norm > config.grad_clip) factor = config.grad_clip / norm;
    }
    auto values = params.values();
    ++state.steps;
    if (config.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] -= config.learning_rate * (factor * grads[i]);
        }
    } else {
        if (state.m.size() != values.size()) {
            state.m.assign(values.size(), 0.0);
            state.v.assign(values.size(), 0.0);
        }
        const double t = static_cast<double>(state.steps);
        const double c1 = 1.0 - std::pow(config.beta1, t);
        const double c2 = 1.0 - std::pow(config.beta2, t);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = factor * grads[i];
            state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
            state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
            values[i] -= config.learning_rate * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + config.eps);
        }
    }
    params.bump_version();
    if (!params.all_finite()) {
        throw Error(ErrorKind::domain, "parameters became non-finite after an optimizer step");
    }
    return true;
}

}  // namespace lgrpo

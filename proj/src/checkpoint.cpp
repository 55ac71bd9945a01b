// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lgrpo/error.hpp"

namespace lgrpo {

namespace {

constexpr const char* kMagic = "lgrpo-checkpoint";
constexpr int kFormatVersion = 1;

void write_reals(std::ostream& out, std::span<const double> values) {
    char buf[32];
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", values[i]);
        if (i > 0) out << ' ';
        out << buf;
    }
    out << '\n';
}

void write_params(std::ostream& out, const std::string& tag, const PolicyParams& p) {
    const ModelConfig& c = p.config();
    out << "params " << tag << ' ' << p.version() << ' ' << c.vocab << ' ' << c.dim << ' ' << c.layers << ' '
        << c.mlp_hidden << ' ' << c.max_positions << '\n';
    for (std::size_t s = 0; s < p.layout().size(); ++s) {
        const TensorSlot& slot = p.layout()[s];
        out << "tensor " << slot.name << ' ' << slot.rows << ' ' << slot.cols << '\n';
        write_reals(out, p.tensor(s));
    }
}

class Reader {
public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    std::istringstream line(const std::string& expect_key) {
        std::string text;
        if (!std::getline(in_, text)) fail("unexpected end of file, wanted '" + expect_key + "'");
        ++lineno_;
        std::istringstream ss(text);
        std::string key;
        ss >> key;
        if (key != expect_key) fail("expected '" + expect_key + "', found '" + key + "'");
        return ss;
    }

    std::string peek_key() {
        const auto pos = in_.tellg();
        std::string key;
        in_ >> key;
        in_.seekg(pos);
        return key;
    }

    void read_reals(std::span<double> out) {
        std::string text;
        if (!std::getline(in_, text)) fail("missing value line");
        ++lineno_;
        std::istringstream ss(text);
        for (double& v : out) {
            if (!(ss >> v)) fail("too few values");
        }
        std::string extra;
        if (ss >> extra) fail("too many values");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorKind::io, path_ + ":" + std::to_string(lineno_) + ": " + what);
    }

private:
    std::istream& in_;
    std::string path_;
    std::size_t lineno_ = 0;
};

PolicyParams read_params(Reader& r, const std::string& tag) {
    auto ss = r.line("params");
    std::string got_tag;
    std::uint64_t version = 0;
    ModelConfig c;
    ss >> got_tag >> version >> c.vocab >> c.dim >> c.layers >> c.mlp_hidden >> c.max_positions;
    if (!ss || got_tag != tag) r.fail("bad params header for " + tag);
    PolicyParams p(c);
    p.set_version(version);
    for (std::size_t s = 0; s < p.layout().size(); ++s) {
        const TensorSlot& slot = p.layout()[s];
        auto ts = r.line("tensor");
        std::string name;
        std::size_t rows = 0;
        std::size_t cols = 0;
        ts >> name >> rows >> cols;
        if (name != slot.name || rows != slot.rows || cols != slot.cols) {
            r.fail("tensor " + name + " does not match layout slot " + slot.name);
        }
        r.read_reals(p.tensor(s));
    }
    if (!p.all_finite()) r.fail("non-finite parameter in " + tag);
    return p;
}

std::string rest_of(std::istringstream& ss) {
    std::string s;
    std::getline(ss, s);
    if (!s.empty() && s.front() == ' ') s.erase(0, 1);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream out;
    out << kMagic << ' ' << kFormatVersion << '\n';
    out << "stage " << ckpt.stage << '\n';
    out << "algorithm " << (ckpt.algorithm.empty() ? "-" : ckpt.algorithm) << '\n';
    out << "step " << ckpt.step << '\n';
    out << "config_hash " << (ckpt.config_hash.empty() ? "-" : ckpt.config_hash) << '\n';
    for (const auto& [k, v] : ckpt.meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw Error(ErrorKind::invalid_argument, "checkpoint meta entries must be single-line");
        }
        out << "meta " << k << ' ' << v << '\n';
    }
    write_params(out, "policy", ckpt.policy);
    if (ckpt.reference) write_params(out, "reference", *ckpt.reference);
    const OptimizerState& o = ckpt.optimizer;
    out << "optimizer " << o.steps << ' ' << o.skipped << ' ' << o.m.size() << '\n';
    write_reals(out, o.m);
    write_reals(out, o.v);
    out << "end\n";

    const std::filesystem::path target(path);
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(ErrorKind::io, "cannot write " + tmp);
        f << out.str();
        if (!f.flush()) throw Error(ErrorKind::io, "write failed for " + tmp);
    }
    std::filesystem::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::io, "cannot open checkpoint " + path);
    Reader r(f, path);
    Checkpoint ckpt;
    {
        auto ss = r.line(kMagic);
        int version = 0;
        ss >> version;
        if (version != kFormatVersion) r.fail("unsupported checkpoint format " + std::to_string(version));
    }
    r.line("stage") >> ckpt.stage;
    r.line("algorithm") >> ckpt.algorithm;
    if (ckpt.algorithm == "-") ckpt.algorithm.clear();
    r.line("step") >> ckpt.step;
    r.line("config_hash") >> ckpt.config_hash;
    if (ckpt.config_hash == "-") ckpt.config_hash.clear();
    while (r.peek_key() == "meta") {
        auto ss = r.line("meta");
        std::string key;
        ss >> key;
        ckpt.meta[key] = rest_of(ss);
    }
    ckpt.policy = read_params(r, "policy");
    {
        // The reference block is optional.
        std::string key = r.peek_key();
        if (key == "params") ckpt.reference = read_params(r, "reference");
    }
    auto os = r.line("optimizer");
    std::size_t n = 0;
    os >> ckpt.optimizer.steps >> ckpt.optimizer.skipped >> n;
    ckpt.optimizer.m.assign(n, 0.0);
    ckpt.optimizer.v.assign(n, 0.0);
    r.read_reals(ckpt.optimizer.m);
    r.read_reals(ckpt.optimizer.v);
    r.line("end");
    return ckpt;
}

}  // namespace lgrpo

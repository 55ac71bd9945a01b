// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lgrpo/rng.hpp"

namespace lgrpo::testing {

inline std::vector<double> normal_vector(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) {
        const double u1 = std::max(rng.uniform01(), 1e-300);
        const double u2 = rng.uniform01();
        x = scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    return v;
}

inline std::vector<double> uniform_vector(Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform01();
    return v;
}

// Central differences of a scalar function at x.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline bool close(double a, double b, double rel = 1e-4, double abs = 1e-7) {
    return std::abs(a - b) <= abs + rel * std::max(std::abs(a), std::abs(b));
}

inline double softmax_entry(const std::vector<double>& z, std::size_t i) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return std::exp(z[i] - m) / s;
}

inline std::vector<double> to_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace lgrpo::testing

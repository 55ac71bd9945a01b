// SPDX-License-Identifier: Apache-2.0

#include "lgrpo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lgrpo::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1U << 15;

using Index = std::ptrdiff_t;

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
        double* crow = C + i * n;
        if (!accumulate) {
            std::fill(crow, crow + n, 0.0);
        }
        const double* arow = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
        const double* arow = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = B + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            C[i * n + j] = accumulate ? C[i * n + j] + acc : acc;
        }
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
        double* crow = C + i * n;
        if (!accumulate) {
            std::fill(crow, crow + n, 0.0);
        }
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[p * m + i];
            const double* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
    for (Index r = 0; r < static_cast<Index>(rows); ++r) {
        const double* xr = x.data() + r * cols;
        double* yr = y.data() + r * cols;
        const double mx = *std::max_element(xr, xr + cols);
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            total += yr[j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] /= total;
        }
    }
}

void log_softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                      std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
    for (Index r = 0; r < static_cast<Index>(rows); ++r) {
        const double* xr = x.data() + r * cols;
        double* yr = y.data() + r * cols;
        const double mx = *std::max_element(xr, xr + cols);
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            total += std::exp(xr[j] - mx);
        }
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = xr[j] - lse;
        }
    }
}

}  // namespace lgrpo::kernels

// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "lgrpo/kernels.hpp"

namespace lgrpo::kernels::reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[j * k + p];
            }
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[p * m + i] * b[p * n + j];
            }
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = x[r * cols];
        for (std::size_t j = 1; j < cols; ++j) {
            mx = std::fmax(mx, x[r * cols + j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            total += std::exp(x[r * cols + j] - mx);
        }
        for (std::size_t j = 0; j < cols; ++j) {
            y[r * cols + j] = std::exp(x[r * cols + j] - mx) / total;
        }
    }
}

void log_softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                      std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = x[r * cols];
        for (std::size_t j = 1; j < cols; ++j) {
            mx = std::fmax(mx, x[r * cols + j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            total += std::exp(x[r * cols + j] - mx);
        }
        for (std::size_t j = 0; j < cols; ++j) {
            y[r * cols + j] = x[r * cols + j] - mx - std::log(total);
        }
    }
}

}  // namespace lgrpo::kernels::reference

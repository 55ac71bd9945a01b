// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major kernels used by the autodiff tape. The default versions
// split the outer (row) loop across OpenMP threads; every output element is
// still reduced in a fixed order, so results do not depend on thread count.
// `reference::` holds plain serial loops kept as a test oracle and as the
// benchmark baseline.

#pragma once

#include <cstddef>
#include <span>

namespace lgrpo::kernels {

// c[m×n] (+)= a[m×k] · b[k×n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// c[m×n] (+)= a[k×m]ᵀ · b[k×n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols);
void log_softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                      std::size_t cols);

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols);
void log_softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                      std::size_t cols);

}  // namespace reference

}  // namespace lgrpo::kernels

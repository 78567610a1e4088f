#pragma once

#include <cstddef>

#include "stagecast/parallel.hpp"

// Row-major dense kernels used by the network and its adjoints. Every output
// element accumulates its terms in a fixed order with explicit fused
// multiply-adds, so Serial and Parallel results are bit-identical and a row
// never depends on which other rows share the call.
namespace stagecast::kernels {

/// out(n x m) = a(n x k) * w(k x m) + bias(m); bias may be null.
void matmul_bias(Exec exec, const double* a, const double* w, const double* bias, double* out,
                 std::size_t n, std::size_t k, std::size_t m);

/// out(n x m) += a(n x k) * w(k x m).
void matmul_accumulate(Exec exec, const double* a, const double* w, double* out, std::size_t n,
                       std::size_t k, std::size_t m);

/// out(k x m) += a(n x k)^T * g(n x m), summing rows of a in order.
void accumulate_at_b(Exec exec, const double* a, const double* g, double* out, std::size_t n,
                     std::size_t k, std::size_t m);

/// out(m) += column sums of g(n x m), summing rows in order.
void accumulate_column_sums(const double* g, double* out, std::size_t n, std::size_t m);

/// wt(m x k) = w(k x m)^T.
void transpose(const double* w, double* wt, std::size_t k, std::size_t m);

/// Pairwise sum of x[0..n): fixed association order independent of threading.
double pairwise_sum(const double* x, std::size_t n);

}  // namespace stagecast::kernels

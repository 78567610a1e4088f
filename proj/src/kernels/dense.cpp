#include "stagecast/kernels/dense.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace stagecast::kernels {

namespace {

bool go_parallel(Exec exec, std::size_t work_items) {
  return exec == Exec::Parallel && work_items >= 2 && worker_count() > 1;
}

constexpr std::size_t kTileCols = 16;

// R output rows x 16 columns kept in registers across the whole k loop.
template <std::size_t R>
inline void tile(const double* __restrict a, std::size_t lda, const double* __restrict w, std::size_t ldw,
                 double* __restrict out, std::size_t ldo, std::size_t k) {
  double acc[R][kTileCols];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < kTileCols; ++j) acc[r][j] = out[r * ldo + j];
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* wr = w + kk * ldw;
#pragma GCC unroll 4
    for (std::size_t r = 0; r < R; ++r) {
      const double ar = a[r * lda + kk];
#pragma omp simd
      for (std::size_t j = 0; j < kTileCols; ++j) acc[r][j] = std::fma(ar, wr[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < kTileCols; ++j) out[r * ldo + j] = acc[r][j];
  }
}

// Columns past the last full tile.
inline void edge(const double* a, std::size_t lda, const double* w, std::size_t ldw, double* out,
                 std::size_t ldo, std::size_t rows, std::size_t k, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double ar = a[r * lda + kk];
      const double* wr = w + kk * ldw;
      for (std::size_t j = 0; j < cols; ++j) out[r * ldo + j] = std::fma(ar, wr[j], out[r * ldo + j]);
    }
  }
}

// Rows [i, i + rows) of out += a * w, rows <= 4.
void row_panel(const double* a, const double* w, double* out, std::size_t rows, std::size_t k,
               std::size_t m) {
  const std::size_t full = m / kTileCols * kTileCols;
  for (std::size_t j = 0; j < full; j += kTileCols) {
    switch (rows) {
      case 4: tile<4>(a, k, w + j, m, out + j, m, k); break;
      case 3: tile<3>(a, k, w + j, m, out + j, m, k); break;
      case 2: tile<2>(a, k, w + j, m, out + j, m, k); break;
      default: tile<1>(a, k, w + j, m, out + j, m, k); break;
    }
  }
  if (full < m) edge(a, k, w + full, m, out + full, m, rows, k, m - full);
}

void accumulate_rows(Exec exec, const double* a, const double* w, double* out, std::size_t n,
                     std::size_t k, std::size_t m) {
  const auto blocks = static_cast<std::ptrdiff_t>((n + 3) / 4);
  const bool parallel = go_parallel(exec, static_cast<std::size_t>(blocks)) && n * k * m >= kParallelGrain * 64;
#pragma omp parallel for schedule(static) num_threads(worker_count()) if (parallel)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const auto i = static_cast<std::size_t>(b) * 4;
    row_panel(a + i * k, w, out + i * m, std::min<std::size_t>(4, n - i), k, m);
  }
}

}  // namespace

void matmul_bias(Exec exec, const double* a, const double* w, const double* bias, double* out,
                 std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    if (bias) {
      std::memcpy(out + i * m, bias, m * sizeof(double));
    } else {
      std::fill(out + i * m, out + (i + 1) * m, 0.0);
    }
  }
  accumulate_rows(exec, a, w, out, n, k, m);
}

void matmul_accumulate(Exec exec, const double* a, const double* w, double* out, std::size_t n,
                       std::size_t k, std::size_t m) {
  accumulate_rows(exec, a, w, out, n, k, m);
}

void accumulate_at_b(Exec exec, const double* a, const double* g, double* out, std::size_t n,
                     std::size_t k, std::size_t m) {
  // out(kk, j) += sum_i a(i, kk) g(i, j): a^T viewed with row stride 1, column stride k.
  const auto blocks = static_cast<std::ptrdiff_t>((k + 3) / 4);
  const bool parallel = go_parallel(exec, static_cast<std::size_t>(blocks)) && n * k * m >= kParallelGrain * 64;
  const std::size_t full = m / kTileCols * kTileCols;
  // Each thread owns whole output rows; rows of a are visited in order.
#pragma omp parallel for schedule(static) num_threads(worker_count()) if (parallel)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const auto k0 = static_cast<std::size_t>(b) * 4;
    const std::size_t rows = std::min<std::size_t>(4, k - k0);
    double* o = out + k0 * m;
    for (std::size_t j = 0; j < full; j += kTileCols) {
      double acc[4][kTileCols];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t jj = 0; jj < kTileCols; ++jj) acc[r][jj] = o[r * m + j + jj];
      }
      if (rows == 4) {
        for (std::size_t i = 0; i < n; ++i) {
          const double* ar = a + i * k + k0;
          const double* gr = g + i * m + j;
#pragma GCC unroll 4
          for (std::size_t r = 0; r < 4; ++r) {
#pragma omp simd
            for (std::size_t jj = 0; jj < kTileCols; ++jj) acc[r][jj] = std::fma(ar[r], gr[jj], acc[r][jj]);
          }
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const double* ar = a + i * k + k0;
          const double* gr = g + i * m + j;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t jj = 0; jj < kTileCols; ++jj) acc[r][jj] = std::fma(ar[r], gr[jj], acc[r][jj]);
          }
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t jj = 0; jj < kTileCols; ++jj) o[r * m + j + jj] = acc[r][jj];
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < n; ++i) {
        const double s = a[i * k + k0 + r];
        const double* gr = g + i * m;
        for (std::size_t j = full; j < m; ++j) o[r * m + j] = std::fma(s, gr[j], o[r * m + j]);
      }
    }
  }
}

void accumulate_column_sums(const double* g, double* out, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* gr = g + i * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += gr[j];
  }
}

void transpose(const double* w, double* wt, std::size_t k, std::size_t m) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    for (std::size_t j = 0; j < m; ++j) wt[j * k + kk] = w[kk * m + j];
  }
}

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

}  // namespace stagecast::kernels

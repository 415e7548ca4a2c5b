#include "rotinv/kernels.hpp"

#include <algorithm>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rotinv::kernels {

namespace {

constexpr std::size_t kParallelFlops = 1u << 16;

inline void gemm_nn_row(std::size_t r, std::size_t inner, std::size_t cols, const double* a,
                        const double* b, double* c) {
  const double* arow = a + r * inner;
  double* crow = c + r * cols;
  for (std::size_t k = 0; k < inner; ++k) {
    const double av = arow[k];
    if (av == 0.0) continue;
    const double* brow = b + k * cols;
    for (std::size_t n = 0; n < cols; ++n) crow[n] += av * brow[n];
  }
}

inline void gemm_nt_row(std::size_t r, std::size_t cols, std::size_t inner, const double* g,
                        const double* b, double* c) {
  const double* grow = g + r * cols;
  double* crow = c + r * inner;
  for (std::size_t k = 0; k < inner; ++k) {
    const double* brow = b + k * cols;
    double acc = 0.0;
    for (std::size_t n = 0; n < cols; ++n) acc += grow[n] * brow[n];
    crow[k] += acc;
  }
}

// One output row k of C = A^T G, accumulated over input rows in order.
inline void gemm_tn_row(std::size_t k, std::size_t rows, std::size_t inner, std::size_t cols,
                        const double* a, const double* g, double* c) {
  double* crow = c + k * cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double av = a[r * inner + k];
    if (av == 0.0) continue;
    const double* grow = g + r * cols;
    for (std::size_t n = 0; n < cols; ++n) crow[n] += av * grow[n];
  }
}

void knn_row(std::span<const double> data, std::size_t n, std::size_t dim, std::size_t k,
             std::size_t row, std::vector<double>& dist, std::vector<std::size_t>& order,
             std::size_t* out) {
  const double* q = data.data() + row * dim;
  for (std::size_t j = 0; j < n; ++j) {
    const double* p = data.data() + j * dim;
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = q[d] - p[d];
      s += diff * diff;
    }
    dist[j] = s;
  }
  order.clear();
  for (std::size_t j = 0; j < n; ++j)
    if (j != row) order.push_back(j);
  auto less = [&](std::size_t x, std::size_t y) {
    return dist[x] < dist[y] || (dist[x] == dist[y] && x < y);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    less);
  std::copy_n(order.begin(), k, out);
}

}  // namespace

namespace serial {

void gemm_nn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* b, double* c) {
  for (std::size_t r = 0; r < rows; ++r) gemm_nn_row(r, inner, cols, a, b, c);
}

void gemm_nt(std::size_t rows, std::size_t cols, std::size_t inner, const double* g,
             const double* b, double* c) {
  for (std::size_t r = 0; r < rows; ++r) gemm_nt_row(r, cols, inner, g, b, c);
}

void gemm_tn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* g, double* c) {
  for (std::size_t k = 0; k < inner; ++k) gemm_tn_row(k, rows, inner, cols, a, g, c);
}

std::vector<std::size_t> knn(std::span<const double> data, std::size_t n, std::size_t dim,
                             std::size_t k) {
  std::vector<std::size_t> out(n * k);
  std::vector<double> dist(n);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t row = 0; row < n; ++row)
    knn_row(data, n, dim, k, row, dist, order, out.data() + row * k);
  return out;
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* b, double* c) {
  const auto total = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < total; ++r)
    gemm_nn_row(static_cast<std::size_t>(r), inner, cols, a, b, c);
}

void gemm_nt(std::size_t rows, std::size_t cols, std::size_t inner, const double* g,
             const double* b, double* c) {
  const auto total = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < total; ++r)
    gemm_nt_row(static_cast<std::size_t>(r), cols, inner, g, b, c);
}

void gemm_tn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* g, double* c) {
  const auto total = static_cast<std::ptrdiff_t>(inner);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < total; ++k)
    gemm_tn_row(static_cast<std::size_t>(k), rows, inner, cols, a, g, c);
}

std::vector<std::size_t> knn(std::span<const double> data, std::size_t n, std::size_t dim,
                             std::size_t k) {
  std::vector<std::size_t> out(n * k);
  const auto total = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel
  {
    std::vector<double> dist(n);
    std::vector<std::size_t> order;
    order.reserve(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t row = 0; row < total; ++row)
      knn_row(data, n, dim, k, static_cast<std::size_t>(row), dist, order,
              out.data() + static_cast<std::size_t>(row) * k);
  }
  return out;
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {
bool go_parallel(std::size_t flops) {
#ifdef _OPENMP
  return flops >= kParallelFlops && omp_get_max_threads() > 1 && !omp_in_parallel();
#else
  (void)flops;
  return false;
#endif
}
}  // namespace

void gemm_nn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* b, double* c) {
  if (go_parallel(rows * inner * cols))
    parallel::gemm_nn(rows, inner, cols, a, b, c);
  else
    serial::gemm_nn(rows, inner, cols, a, b, c);
}

void gemm_nt(std::size_t rows, std::size_t cols, std::size_t inner, const double* g,
             const double* b, double* c) {
  if (go_parallel(rows * inner * cols))
    parallel::gemm_nt(rows, cols, inner, g, b, c);
  else
    serial::gemm_nt(rows, cols, inner, g, b, c);
}

void gemm_tn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* g, double* c) {
  if (go_parallel(rows * inner * cols))
    parallel::gemm_tn(rows, inner, cols, a, g, c);
  else
    serial::gemm_tn(rows, inner, cols, a, g, c);
}

std::vector<std::size_t> knn(std::span<const double> data, std::size_t n, std::size_t dim,
                             std::size_t k) {
  if (go_parallel(n * n * dim)) return parallel::knn(data, n, dim, k);
  return serial::knn(data, n, dim, k);
}

}  // namespace rotinv::kernels

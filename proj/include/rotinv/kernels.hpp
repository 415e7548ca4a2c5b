#pragma once

// Dense inner loops shared by the autodiff engine and the neighbor search.
//
// Every kernel exists twice: a plain serial reference (`serial::`) and an
// OpenMP version (`parallel::`). The parallel versions split work over output
// rows only, so each output element is reduced by one thread in the same
// order as the reference and results are bit-identical for any thread count.

#include <cstddef>
#include <span>
#include <vector>

namespace rotinv::kernels {

namespace serial {

// C[R,N] += A[R,K] * B[K,N]
void gemm_nn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* b, double* c);
// C[R,K] += G[R,N] * B[K,N]^T
void gemm_nt(std::size_t rows, std::size_t cols, std::size_t inner, const double* g,
             const double* b, double* c);
// C[K,N] += A[R,K]^T * G[R,N]
void gemm_tn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* g, double* c);

// Brute-force K nearest rows of `data` (n x dim, row-major) for every row,
// self excluded, ordered by (squared distance, index).
std::vector<std::size_t> knn(std::span<const double> data, std::size_t n, std::size_t dim,
                             std::size_t k);

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* b, double* c);
void gemm_nt(std::size_t rows, std::size_t cols, std::size_t inner, const double* g,
             const double* b, double* c);
void gemm_tn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* g, double* c);
std::vector<std::size_t> knn(std::span<const double> data, std::size_t n, std::size_t dim,
                             std::size_t k);

}  // namespace parallel

/// Number of OpenMP threads the parallel kernels may use (1 without OpenMP).
int max_threads();

// Dispatch: parallel when the work is large enough to amortize a team.
void gemm_nn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* b, double* c);
void gemm_nt(std::size_t rows, std::size_t cols, std::size_t inner, const double* g,
             const double* b, double* c);
void gemm_tn(std::size_t rows, std::size_t inner, std::size_t cols, const double* a,
             const double* g, double* c);
std::vector<std::size_t> knn(std::span<const double> data, std::size_t n, std::size_t dim,
                             std::size_t k);

}  // namespace rotinv::kernels

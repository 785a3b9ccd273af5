#pragma once

// Dense float32 kernels used by the tape. Two implementations share one
// signature set:
//   serial::  straightforward reference loops, kept for testing and benchmarks
//   omp::     4-row blocked loops (AVX2 clones where available), OpenMP-parallel
//             over row blocks
//
// Every output element is reduced in the same fixed sequential order in both
// variants, so results do not depend on the thread count.

#include <cstddef>

namespace gemft::kernels {

inline constexpr float kLayerNormEps = 1e-5f;

#define GEMFT_KERNEL_DECLS                                                                          \
  /* C[m,n] (+)= A[m,k] * B[k,n] */                                                                 \
  void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);      \
  /* C[m,n] (+)= A[m,k] * B[n,k]^T */                                                               \
  void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);   \
  /* C[k,n] (+)= A[m,k]^T * B[m,n] */                                                               \
  void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);   \
  void gelu(const float* x, float* y, std::size_t n);                                               \
  /* dx += gelu'(x) * dy */                                                                         \
  void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n);                    \
  void softmax_rows(const float* x, float* y, int rows, int cols);                                  \
  /* dx += y * (dy - <dy, y>) per row */                                                            \
  void softmax_rows_backward(const float* y, const float* dy, float* dx, int rows, int cols);       \
  /* y = gain * (x - mean) * rstd + bias; mean/rstd saved per row */                                \
  void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y, float* mean, \
                       float* rstd, int rows, int cols);                                            \
  /* dx, dgain, dbias accumulate; any of them may be null */                                        \
  void layer_norm_rows_backward(const float* x, const float* gain, const float* mean,               \
                                const float* rstd, const float* dy, float* dx, float* dgain,        \
                                float* dbias, int rows, int cols);

namespace serial {
GEMFT_KERNEL_DECLS
}

namespace omp {
GEMFT_KERNEL_DECLS
}

#undef GEMFT_KERNEL_DECLS

// Dispatch used by the tape: the OpenMP variant, which falls back to a single
// thread when already inside a parallel region.
using namespace omp;

float gelu_scalar(float x);
float gelu_derivative_scalar(float x);

}  // namespace gemft::kernels

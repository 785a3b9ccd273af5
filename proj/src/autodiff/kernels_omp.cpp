#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gemft/kernels.hpp"

namespace gemft::kernels::omp {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;

bool go_parallel(long work) { return work >= kParallelWork && !omp_in_parallel(); }

}  // namespace

// AVX2 clones are picked at load time; no FMA, so rounding matches the baseline build
#define GEMFT_SIMD __attribute__((target_clones("avx2", "default")))

GEMFT_SIMD void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  // blocks of 4 rows share each load of b; per-element sums still run over p in order
  const int blocks = (m + 3) / 4;
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(m) * k * n))
  for (int blk = 0; blk < blocks; ++blk) {
    const int i0 = blk * 4;
    const int rows = std::min(4, m - i0);
    float* c0 = c + static_cast<long>(i0) * n;
    if (!accumulate)
      for (long j = 0; j < static_cast<long>(rows) * n; ++j) c0[j] = 0.0f;
    const float* a0 = a + static_cast<long>(i0) * k;
    if (rows == 4) {
      float* c1 = c0 + n;
      float* c2 = c1 + n;
      float* c3 = c2 + n;
      for (int p = 0; p < k; ++p) {
        const float x0 = a0[p], x1 = a0[k + p], x2 = a0[2L * k + p], x3 = a0[3L * k + p];
        const float* bp = b + static_cast<long>(p) * n;
        for (int j = 0; j < n; ++j) {
          const float bj = bp[j];
          c0[j] += x0 * bj;
          c1[j] += x1 * bj;
          c2[j] += x2 * bj;
          c3[j] += x3 * bj;
        }
      }
    } else {
      for (int r = 0; r < rows; ++r) {
        float* ci = c0 + static_cast<long>(r) * n;
        const float* ai = a0 + static_cast<long>(r) * k;
        for (int p = 0; p < k; ++p) {
          const float aip = ai[p];
          const float* bp = b + static_cast<long>(p) * n;
          for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
      }
    }
  }
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  std::vector<float> bt(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j)
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = b[static_cast<std::size_t>(j) * k + p];
  matmul(a, bt.data(), c, m, k, n, accumulate);
}

GEMFT_SIMD void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  const int blocks = (k + 3) / 4;
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(m) * k * n))
  for (int blk = 0; blk < blocks; ++blk) {
    const int p0 = blk * 4;
    const int rows = std::min(4, k - p0);
    float* c0 = c + static_cast<long>(p0) * n;
    if (!accumulate)
      for (long j = 0; j < static_cast<long>(rows) * n; ++j) c0[j] = 0.0f;
    if (rows == 4) {
      float* c1 = c0 + n;
      float* c2 = c1 + n;
      float* c3 = c2 + n;
      for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<long>(i) * k + p0;
        const float x0 = ai[0], x1 = ai[1], x2 = ai[2], x3 = ai[3];
        const float* bi = b + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) {
          const float bj = bi[j];
          c0[j] += x0 * bj;
          c1[j] += x1 * bj;
          c2[j] += x2 * bj;
          c3[j] += x3 * bj;
        }
      }
    } else {
      for (int r = 0; r < rows; ++r) {
        float* cp = c0 + static_cast<long>(r) * n;
        for (int i = 0; i < m; ++i) {
          const float aip = a[static_cast<long>(i) * k + p0 + r];
          const float* bi = b + static_cast<long>(i) * n;
          for (int j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
      }
    }
  }
}

void gelu(const float* x, float* y, std::size_t n) {
  const long len = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (go_parallel(len * 16))
  for (long i = 0; i < len; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
  const long len = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (go_parallel(len * 16))
  for (long i = 0; i < len; ++i) dx[i] += gelu_derivative_scalar(x[i]) * dy[i];
}

void softmax_rows(const float* x, float* y, int rows, int cols) {
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(rows) * cols * 8))
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + static_cast<long>(r) * cols;
    float* yr = y + static_cast<long>(r) * cols;
    float mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = std::fmax(mx, xr[j]);
    float sum = 0.0f;
    for (int j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const float inv = 1.0f / sum;
    for (int j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void softmax_rows_backward(const float* y, const float* dy, float* dx, int rows, int cols) {
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(rows) * cols * 4))
  for (int r = 0; r < rows; ++r) {
    const float* yr = y + static_cast<long>(r) * cols;
    const float* dyr = dy + static_cast<long>(r) * cols;
    float* dxr = dx + static_cast<long>(r) * cols;
    float dot = 0.0f;
    for (int j = 0; j < cols; ++j) dot += yr[j] * dyr[j];
    for (int j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
  }
}

void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y, float* mean,
                     float* rstd, int rows, int cols) {
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(rows) * cols * 4))
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + static_cast<long>(r) * cols;
    float* yr = y + static_cast<long>(r) * cols;
    float mu = 0.0f;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<float>(cols);
    float var = 0.0f;
    for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<float>(cols);
    const float rs = 1.0f / std::sqrt(var + kLayerNormEps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int j = 0; j < cols; ++j) yr[j] = gain[j] * (xr[j] - mu) * rs + bias[j];
  }
}

void layer_norm_rows_backward(const float* x, const float* gain, const float* mean, const float* rstd,
                              const float* dy, float* dx, float* dgain, float* dbias, int rows, int cols) {
  const float inv_n = 1.0f / static_cast<float>(cols);
  if (dx) {
#pragma omp parallel for schedule(static) if (go_parallel(static_cast<long>(rows) * cols * 6))
    for (int r = 0; r < rows; ++r) {
      const float* xr = x + static_cast<long>(r) * cols;
      const float* dyr = dy + static_cast<long>(r) * cols;
      float* dxr = dx + static_cast<long>(r) * cols;
      const float mu = mean[r];
      const float rs = rstd[r];
      float sum_g = 0.0f;
      float sum_gx = 0.0f;
      for (int j = 0; j < cols; ++j) {
        const float xhat = (xr[j] - mu) * rs;
        const float g = dyr[j] * gain[j];
        sum_g += g;
        sum_gx += g * xhat;
      }
      for (int j = 0; j < cols; ++j) {
        const float xhat = (xr[j] - mu) * rs;
        dxr[j] += rs * (dyr[j] * gain[j] - inv_n * sum_g - xhat * inv_n * sum_gx);
      }
    }
  }
  if (!dgain && !dbias) return;
  std::vector<float> sg(cols, 0.0f), sb(cols, 0.0f);
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + static_cast<long>(r) * cols;
    const float* dyr = dy + static_cast<long>(r) * cols;
    const float mu = mean[r];
    const float rs = rstd[r];
    for (int j = 0; j < cols; ++j) {
      sg[j] += dyr[j] * ((xr[j] - mu) * rs);
      sb[j] += dyr[j];
    }
  }
  for (int j = 0; j < cols; ++j) {
    if (dgain) dgain[j] += sg[j];
    if (dbias) dbias[j] += sb[j];
  }
}

}  // namespace gemft::kernels::omp

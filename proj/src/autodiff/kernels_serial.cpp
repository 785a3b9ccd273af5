#include <cmath>

#include "gemft/kernels.hpp"

namespace gemft::kernels {

namespace {
constexpr float kSqrt2OverPi = 0.7978845608028654f;
constexpr float kGeluCubic = 0.044715f;
}  // namespace

namespace {

// tanh through one expf; absolute error stays near float epsilon and it is
// several times cheaper than tanhf
float fast_tanh(float u) {
  if (u > 10.0f) return 1.0f;
  if (u < -10.0f) return -1.0f;
  const float e = std::exp(2.0f * u);
  return (e - 1.0f) / (e + 1.0f);
}

}  // namespace

float gelu_scalar(float x) {
  const float inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
  return 0.5f * x * (1.0f + fast_tanh(inner));
}

float gelu_derivative_scalar(float x) {
  const float inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
  const float t = fast_tanh(inner);
  const float dinner = kSqrt2OverPi * (1.0f + 3.0f * kGeluCubic * x * x);
  return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * dinner;
}

namespace serial {

void matmul(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      float acc = accumulate ? c[i * n + j] : 0.0f;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      float acc = accumulate ? c[i * n + j] : 0.0f;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  for (int p = 0; p < k; ++p) {
    for (int j = 0; j < n; ++j) {
      float acc = accumulate ? c[p * n + j] : 0.0f;
      for (int i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
      c[p * n + j] = acc;
    }
  }
}

void gelu(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += gelu_derivative_scalar(x[i]) * dy[i];
}

void softmax_rows(const float* x, float* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    float* yr = y + r * cols;
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
  for (int r = 0; r < rows; ++r) {
    const float* yr = y + r * cols;
    const float* dyr = dy + r * cols;
    float dot = 0.0f;
    for (int j = 0; j < cols; ++j) dot += yr[j] * dyr[j];
    for (int j = 0; j < cols; ++j) dx[r * cols + j] += yr[j] * (dyr[j] - dot);
  }
}

void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y, float* mean,
                     float* rstd, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    float mu = 0.0f;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<float>(cols);
    float var = 0.0f;
    for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<float>(cols);
    const float rs = 1.0f / std::sqrt(var + kLayerNormEps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int j = 0; j < cols; ++j) y[r * cols + j] = gain[j] * (xr[j] - mu) * rs + bias[j];
  }
}

void layer_norm_rows_backward(const float* x, const float* gain, const float* mean, const float* rstd,
                              const float* dy, float* dx, float* dgain, float* dbias, int rows, int cols) {
  const float inv_n = 1.0f / static_cast<float>(cols);
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    const float* dyr = dy + r * cols;
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
      if (dx) dx[r * cols + j] += rs * (dyr[j] * gain[j] - inv_n * sum_g - xhat * inv_n * sum_gx);
    }
  }
  // Parameter gradients reduce over rows; keep the row order sequential.
  for (int j = 0; j < cols; ++j) {
    float sg = 0.0f;
    float sb = 0.0f;
    for (int r = 0; r < rows; ++r) {
      const float xhat = (x[r * cols + j] - mean[r]) * rstd[r];
      sg += dy[r * cols + j] * xhat;
      sb += dy[r * cols + j];
    }
    if (dgain) dgain[j] += sg;
    if (dbias) dbias[j] += sb;
  }
}

}  // namespace serial
}  // namespace gemft::kernels

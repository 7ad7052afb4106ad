#include "mil/kernels.hpp"

#include <cmath>

namespace mil::kernels {

namespace {
// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 16;
}  // namespace

namespace parallel {

void gemm_nn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork && m > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* crow = C + i * n;
    const double* arow = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = arow[p];
      if (s == 0.0) continue;  // bag features are mostly zero pixels
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork && m > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    const double* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B + j * k;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) s0 += arow[p] * brow[p];
      C[i * n + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork && m > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = A[p * m + i];
      if (s == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, double lr, double beta1, double beta2, double eps,
                 double bias1, double bias2) {
  const std::size_t size = theta.size();
  double* __restrict th = theta.data();
  const double* __restrict g = grad.data();
  double* __restrict mm = m.data();
  double* __restrict vv = v.data();
  const double inv_bias1 = 1.0 / bias1;
  const double inv_bias2 = 1.0 / bias2;
#pragma omp parallel for simd schedule(static) if (size >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(size); ++i) {
    const double gi = g[i];
    const double mi = beta1 * mm[i] + (1.0 - beta1) * gi;
    const double vi = beta2 * vv[i] + (1.0 - beta2) * gi * gi;
    mm[i] = mi;
    vv[i] = vi;
    th[i] -= lr * (mi * inv_bias1) / (std::sqrt(vi * inv_bias2) + eps);
  }
}

}  // namespace parallel

namespace reference {

void gemm_nn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] += s;
    }
}

void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] += s;
    }
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, double lr, double beta1, double beta2, double eps,
                 double bias1, double bias2) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    theta[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

}  // namespace reference

}  // namespace mil::kernels

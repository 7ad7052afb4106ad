#include <gtest/gtest.h>
#include <omp.h>

#include "mil/kernels.hpp"
#include "mil/rng.hpp"

namespace {

namespace kp = mil::kernels::parallel;
namespace kr = mil::kernels::reference;

std::vector<double> random_vec(std::size_t n, mil::Rng& rng, double zero_fraction = 0.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() < zero_fraction ? 0.0 : rng.uniform(-1, 1);
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol * (1 + std::abs(b[i]))) << "at " << i;
}

struct Shape {
  std::size_t m, k, n;
};

class GemmShapes : public ::testing::TestWithParam<Shape> {};

TEST_P(GemmShapes, ParallelMatchesReference) {
  const auto [m, k, n] = GetParam();
  mil::Rng rng(m * 131 + k * 7 + n);
  auto a = random_vec(m * k, rng, 0.3);
  auto b = random_vec(k * n, rng);
  auto c0 = random_vec(m * n, rng);  // accumulate into a nonzero C

  auto c_par = c0, c_ref = c0;
  kp::gemm_nn_acc(a, b, c_par, m, k, n);
  kr::gemm_nn_acc(a, b, c_ref, m, k, n);
  expect_close(c_par, c_ref, 1e-12);

  auto bt = random_vec(n * k, rng);
  c_par = c0, c_ref = c0;
  kp::gemm_nt_acc(a, bt, c_par, m, k, n);
  kr::gemm_nt_acc(a, bt, c_ref, m, k, n);
  expect_close(c_par, c_ref, 1e-12);

  auto at = random_vec(k * m, rng, 0.3);
  c_par = c0, c_ref = c0;
  kp::gemm_tn_acc(at, b, c_par, m, k, n);
  kr::gemm_tn_acc(at, b, c_ref, m, k, n);
  expect_close(c_par, c_ref, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Kernels, GemmShapes,
                         ::testing::Values(Shape{1, 1, 1}, Shape{3, 4, 2}, Shape{10, 784, 256}, Shape{7, 5, 129},
                                           Shape{64, 64, 64}, Shape{1, 300, 1}));

TEST(Kernels, ResultsIndependentOfThreadCount) {
  mil::Rng rng(5);
  const std::size_t m = 48, k = 200, n = 96;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  std::vector<double> c1(m * n), c4(m * n);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  kp::gemm_nn_acc(a, b, c1, m, k, n);
  omp_set_num_threads(4);
  kp::gemm_nn_acc(a, b, c4, m, k, n);
  omp_set_num_threads(saved);
  EXPECT_EQ(c1, c4);
}

TEST(Kernels, AdamParallelMatchesReference) {
  mil::Rng rng(9);
  const std::size_t n = 70000;
  auto theta = random_vec(n, rng);
  auto grad = random_vec(n, rng);
  auto m = random_vec(n, rng);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform();
  auto t2 = theta, m2 = m, v2 = v;
  kp::adam_update(theta, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.19, 0.002);
  kr::adam_update(t2, grad, m2, v2, 1e-3, 0.9, 0.999, 1e-8, 0.19, 0.002);
  expect_close(theta, t2, 1e-13);
  expect_close(m, m2, 1e-15);
  expect_close(v, v2, 1e-15);
}

}  // namespace

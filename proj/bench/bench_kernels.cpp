// Parallel kernels vs. serial reference, plus one full training step of the
// default multi-attention model on an MNIST-bags sized bag.
#include <benchmark/benchmark.h>

#include <vector>

#include "mil/kernels.hpp"
#include "mil/models.hpp"
#include "mil/rng.hpp"
#include "mil/training.hpp"

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double zero_fraction = 0.0) {
  mil::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() < zero_fraction ? 0.0 : rng.uniform(-1, 1);
  return v;
}

// Shapes of the first layer: a 10-instance bag of 784 pixels times a 784x256 weight.
template <auto Kernel>
void BM_gemm_nn(benchmark::State& state) {
  const std::size_t m = 10, k = 784, n = 256;
  auto a = random_vec(m * k, 1, 0.8);
  auto b = random_vec(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * m * k * n));
}

template <auto Kernel>
void BM_gemm_tn(benchmark::State& state) {
  const std::size_t m = 784, k = 10, n = 256;
  auto a = random_vec(k * m, 1, 0.8);
  auto b = random_vec(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * m * k * n));
}

template <auto Kernel>
void BM_gemm_nt(benchmark::State& state) {
  const std::size_t m = 10, k = 256, n = 256;
  auto a = random_vec(m * k, 1);
  auto b = random_vec(n * k, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * m * k * n));
}

template <auto Kernel>
void BM_adam(benchmark::State& state) {
  const std::size_t n = 784 * 256;
  auto theta = random_vec(n, 1);
  auto grad = random_vec(n, 2);
  std::vector<double> m(n), v(n);
  for (auto _ : state) {
    Kernel(theta, grad, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001);
    benchmark::DoNotOptimize(theta.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n));
}

void BM_train_step_multi_attention(benchmark::State& state) {
  mil::Model model(mil::init_multi_attention({784, 256, 128}, 0));
  mil::Matrix x(10, 784, std::vector<double>(random_vec(10 * 784, 3, 0.8)));
  auto params = model.parameters();
  mil::AdamState adam(params);
  for (auto _ : state) {
    model.zero_grad();
    mil::ad::Graph g;
    auto fp = mil::forward(g, x, model);
    g.backward(mil::ad::cross_entropy(fp.prob, 1));
    mil::adam_step(params, adam);
  }
}

void BM_forward_backward_multi_attention(benchmark::State& state) {
  mil::Model model(mil::init_multi_attention({784, 256, 128}, 0));
  mil::Matrix x(10, 784, std::vector<double>(random_vec(10 * 784, 3, 0.8)));
  for (auto _ : state) {
    mil::ad::Graph g;
    auto fp = mil::forward(g, x, model, {});
    g.backward(mil::ad::cross_entropy(fp.prob, 1));
  }
}

void BM_predict_multi_attention(benchmark::State& state) {
  const mil::Model model(mil::init_multi_attention({784, 256, 128}, 0));
  mil::Matrix x(10, 784, std::vector<double>(random_vec(10 * 784, 3, 0.8)));
  for (auto _ : state) benchmark::DoNotOptimize(mil::predict(model, x));
}

namespace kp = mil::kernels::parallel;
namespace kr = mil::kernels::reference;

BENCHMARK(BM_gemm_nn<kp::gemm_nn_acc>)->Name("gemm_nn/parallel");
BENCHMARK(BM_gemm_nn<kr::gemm_nn_acc>)->Name("gemm_nn/reference");
BENCHMARK(BM_gemm_tn<kp::gemm_tn_acc>)->Name("gemm_tn/parallel");
BENCHMARK(BM_gemm_tn<kr::gemm_tn_acc>)->Name("gemm_tn/reference");
BENCHMARK(BM_gemm_nt<kp::gemm_nt_acc>)->Name("gemm_nt/parallel");
BENCHMARK(BM_gemm_nt<kr::gemm_nt_acc>)->Name("gemm_nt/reference");
BENCHMARK(BM_adam<kp::adam_update>)->Name("adam/parallel");
BENCHMARK(BM_adam<kr::adam_update>)->Name("adam/reference");
BENCHMARK(BM_train_step_multi_attention);
BENCHMARK(BM_forward_backward_multi_attention);
BENCHMARK(BM_predict_multi_attention);

}  // namespace

BENCHMARK_MAIN();

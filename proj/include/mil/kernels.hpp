#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the autodiff ops.
//
// `parallel` variants split the output rows across OpenMP threads; every
// output element is still accumulated by one thread in a fixed order, so
// results do not depend on the thread count. `reference` variants are plain
// serial loops kept as the test oracle and benchmark baseline.
//
// Shapes: A is m x k, B is k x n, C is m x n, all row-major. The *_acc
// functions accumulate into C.
namespace mil::kernels {

namespace parallel {
void gemm_nn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);
// C(m x n) += A(m x k) * B(n x k)^T
void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);
// C(m x n) += A(k x m)^T * B(k x n)
void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);
// Adam moment update and parameter step over one flat array.
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, double lr, double beta1, double beta2, double eps,
                 double bias1, double bias2);
}  // namespace parallel

namespace reference {
void gemm_nn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);
void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);
void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, double lr, double beta1, double beta2, double eps,
                 double bias1, double bias2);
}  // namespace reference

}  // namespace mil::kernels

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mil {

/// Dense row-major matrix of doubles. Plain value type; the autodiff graph
/// and the parameter containers are built on top of it.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  void fill(double v);
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

std::string shape_str(std::size_t rows, std::size_t cols);
inline std::string shape_str(const Matrix& m) { return shape_str(m.rows, m.cols); }

}  // namespace mil

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mil/bag.hpp"
#include "mil/models.hpp"

namespace mil {

struct GradCheckOptions {
  double step = 1e-5;       // central difference half-width
  double tolerance = 1e-4;  // max allowed relative error
  bool fault_injection = false;
};

struct TensorCheck {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  ModelKind kind = ModelKind::multi_attention;
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  bool passed = false;
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

/// Compares backprop gradients of the bag's cross-entropy loss against
/// central finite differences, entry by entry, for every parameter tensor.
GradCheckReport gradient_check(Model& model, const Bag& bag, const GradCheckOptions& opts = {});

/// Tiny random models of all three kinds (D=8, H=6, L=5, K=4; MI-Net widths
/// 6,5,4) on a random bag with features uniform in [-2, 2].
std::vector<GradCheckReport> gradient_check_suite(std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace mil

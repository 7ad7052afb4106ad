#pragma once

#include <string>
#include <vector>

#include "mil/matrix.hpp"

namespace mil {

/// One multiple-instance example: K instance feature rows sharing a single
/// binary label. The label belongs to the bag; instances never carry their own.
struct Bag {
  std::string id;
  Matrix instances;  // K x D
  int label = 0;     // 0 or 1
  // Optional per-instance annotations (patch names, digit tags, ...).
  std::vector<std::string> instance_refs;

  std::size_t size() const { return instances.rows; }
  std::size_t dim() const { return instances.cols; }

  friend bool operator==(const Bag&, const Bag&) = default;
};

}  // namespace mil

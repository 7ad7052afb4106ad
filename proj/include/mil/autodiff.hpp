#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mil/matrix.hpp"

namespace mil {
class Rng;
}

namespace mil::ad {

enum class Activation { identity, tanh, relu };
enum class Reduction { sum, mean, max };

const char* to_string(Activation a);
const char* to_string(Reduction r);

/// A trainable tensor that outlives any single graph: value plus
/// accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

  void zero_grad() { grad.fill(0.0); }
};

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

class Graph;

/// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* g, NodeId id) : graph_(g), id_(id) {}

  Graph* graph() const { return graph_; }
  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Matrix& value() const;
  // Gradient of the last backward pass. For parameter-bound nodes this is the
  // parameter's accumulated gradient.
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = kNoNode;
};

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  matmul_nt,
  transpose,
  add,
  add_row,
  scale,
  activation,
  softmax,
  reduce,
  sum_all,
  cross_entropy,
  dropout,
};

/// Define-by-run tape. Ops append nodes in execution order, so node order is
/// a topological order and backward simply walks it in reverse.
///
/// Leaf gradients (inputs created with requires_grad, and bound parameters)
/// accumulate across backward calls; call zero_grad() or
/// Parameter::zero_grad() to reset. Intermediate gradients are scratch and are
/// cleared at the start of every backward pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor input(Matrix value, bool requires_grad = false);
  // Binds a parameter by reference: no copy of the value, gradients flow into
  // p.grad. With requires_grad=false the parameter is used read-only.
  Tensor parameter(Parameter& p, bool requires_grad = true);
  Tensor constant(const Matrix& value) { return input(value, false); }
  // Read-only leaf referencing external storage that must outlive the graph.
  Tensor view(const Matrix& value);

  void backward(Tensor loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  OpKind op(NodeId id) const { return nodes_.at(id).op; }
  std::vector<NodeId> inputs(NodeId id) const;

  // Test hook: when set, the activation backward rule is deliberately wrong
  // (derivative scaled by 1.5). Used as a negative control for gradcheck.
  void set_fault_injection(bool on) { faulty_backward_ = on; }

 private:
  friend class Tensor;
  friend Tensor matmul(Tensor, Tensor);
  friend Tensor matmul_nt(Tensor, Tensor);
  friend Tensor transpose(Tensor);
  friend Tensor add(Tensor, Tensor);
  friend Tensor add_row(Tensor, Tensor);
  friend Tensor scale(Tensor, double);
  friend Tensor activate(Tensor, Activation);
  friend Tensor softmax(Tensor);
  friend Tensor reduce(Tensor, Reduction);
  friend Tensor sum(Tensor);
  friend Tensor cross_entropy(Tensor, std::size_t);
  friend Tensor dropout(Tensor, double, Rng&);

  struct Node {
    OpKind op = OpKind::leaf;
    NodeId in0 = kNoNode;
    NodeId in1 = kNoNode;
    bool requires_grad = false;
    Matrix value;                        // empty when bound to a parameter
    const Matrix* bound_value = nullptr;
    Matrix* bound_grad = nullptr;
    Matrix grad;                         // scratch, or accumulated for leaves
    double scalar = 0.0;                 // scale factor, dropout keep-scale
    std::uint8_t kind = 0;               // Activation / Reduction tag
    std::vector<std::size_t> index;      // argmax rows, target class
    Matrix mask;                         // dropout mask
  };

  const Matrix& value_of(NodeId id) const {
    const Node& n = nodes_[id];
    return n.bound_value ? *n.bound_value : n.value;
  }
  Tensor push(Node node);
  Node& node(NodeId id) { return nodes_[id]; }
  void backprop_node(Node& n);

  std::vector<Node> nodes_;
  bool faulty_backward_ = false;
};

// Ops. All inputs must come from the same graph. Outputs are checked for
// finiteness; a non-finite result raises ErrorKind::numeric.

// A(m x k) * B(k x n)
Tensor matmul(Tensor a, Tensor b);
// A(m x k) * B(n x k)^T, without materializing the transpose.
Tensor matmul_nt(Tensor a, Tensor b);
Tensor transpose(Tensor a);
// Elementwise sum of equal shapes.
Tensor add(Tensor a, Tensor b);
// X(m x n) + bias(1 x n) broadcast over rows. The only broadcasting op.
Tensor add_row(Tensor x, Tensor bias);
Tensor scale(Tensor x, double factor);
Tensor activate(Tensor x, Activation kind);
// Softmax over all entries of a row or column vector, max-subtracted.
Tensor softmax(Tensor x);
// Columnwise reduction over rows (instances): K x H -> 1 x H. max routes the
// gradient to the first maximal row of each column.
Tensor reduce(Tensor x, Reduction kind);
// Sum of all entries -> 1 x 1.
Tensor sum(Tensor x);
// -log(max(prob[target], 1e-12)) for a probability vector -> 1 x 1.
Tensor cross_entropy(Tensor prob, std::size_t target);
// Inverted dropout with drop probability p; identity when p == 0.
Tensor dropout(Tensor x, double p, Rng& rng);

inline constexpr double kProbFloor = 1e-12;

}  // namespace mil::ad

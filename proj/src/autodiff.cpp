#include "mil/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "mil/error.hpp"
#include "mil/kernels.hpp"
#include "mil/rng.hpp"

namespace mil::ad {

namespace kp = mil::kernels::parallel;

const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

const char* to_string(Reduction r) {
  switch (r) {
    case Reduction::sum: return "sum";
    case Reduction::mean: return "mean";
    case Reduction::max: return "max";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tensor

const Matrix& Tensor::value() const {
  if (!graph_) fail(ErrorKind::contract, "use of an unbound tensor");
  return graph_->value_of(id_);
}

const Matrix& Tensor::grad() const {
  if (!graph_) fail(ErrorKind::contract, "use of an unbound tensor");
  auto& n = graph_->node(id_);
  if (n.bound_grad) return *n.bound_grad;
  if (n.grad.empty() && !value().empty()) n.grad = Matrix(value().rows, value().cols);
  return n.grad;
}

bool Tensor::requires_grad() const { return graph_ && graph_->nodes_[id_].requires_grad; }

// ---------------------------------------------------------------------------
// Graph

Tensor Graph::input(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Tensor Graph::parameter(Parameter& p, bool requires_grad) {
  Node n;
  n.bound_value = &p.value;
  n.requires_grad = requires_grad;
  if (requires_grad) {
    if (!p.grad.same_shape(p.value)) p.grad = Matrix(p.value.rows, p.value.cols);
    n.bound_grad = &p.grad;
  }
  return push(std::move(n));
}

Tensor Graph::view(const Matrix& value) {
  Node n;
  n.bound_value = &value;
  return push(std::move(n));
}

Tensor Graph::push(Node n) {
  if (n.op != OpKind::leaf || !n.bound_value) {
    if (!n.value.all_finite()) fail(ErrorKind::numeric, "non-finite value produced by graph op");
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<NodeId>(nodes_.size() - 1));
}

std::vector<NodeId> Graph::inputs(NodeId id) const {
  std::vector<NodeId> out;
  const Node& n = nodes_.at(id);
  if (n.in0 != kNoNode) out.push_back(n.in0);
  if (n.in1 != kNoNode) out.push_back(n.in1);
  return out;
}

void Graph::zero_grad() {
  for (auto& n : nodes_) {
    if (n.bound_grad) n.bound_grad->fill(0.0);
    n.grad.fill(0.0);
  }
}

void Graph::backward(Tensor loss) {
  if (loss.graph() != this) fail(ErrorKind::contract, "loss tensor belongs to another graph");
  const Matrix& lv = value_of(loss.id());
  if (lv.rows != 1 || lv.cols != 1) {
    fail(ErrorKind::contract, "backward needs a scalar loss, got " + shape_str(lv));
  }

  const NodeId last = loss.id();
  for (NodeId i = 0; i <= last; ++i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.bound_grad) continue;
    const Matrix& v = value_of(i);
    if (n.op == OpKind::leaf) {
      if (!n.grad.same_shape(v)) n.grad = Matrix(v.rows, v.cols);
    } else if (n.grad.same_shape(v)) {
      n.grad.fill(0.0);
    } else {
      n.grad = Matrix(v.rows, v.cols);
    }
  }

  Node& ln = nodes_[last];
  if (!ln.requires_grad) return;
  (ln.bound_grad ? *ln.bound_grad : ln.grad).data[0] += 1.0;

  for (NodeId i = last + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.op == OpKind::leaf) continue;
    backprop_node(n);
  }
}

void Graph::backprop_node(Node& n) {
  auto target = [this](NodeId id) -> Matrix* {
    Node& in = nodes_[id];
    if (!in.requires_grad) return nullptr;
    return in.bound_grad ? in.bound_grad : &in.grad;
  };
  const Matrix& g = n.grad;

  switch (n.op) {
    case OpKind::leaf:
      break;

    case OpKind::matmul: {
      const Matrix& a = value_of(n.in0);
      const Matrix& b = value_of(n.in1);
      if (Matrix* da = target(n.in0)) kp::gemm_nt_acc(g.data, b.data, da->data, a.rows, b.cols, a.cols);
      if (Matrix* db = target(n.in1)) kp::gemm_tn_acc(a.data, g.data, db->data, a.cols, a.rows, b.cols);
      break;
    }

    case OpKind::matmul_nt: {
      const Matrix& a = value_of(n.in0);
      const Matrix& b = value_of(n.in1);
      // C = A B^T:  dA += dC B,  dB += dC^T A
      if (Matrix* da = target(n.in0)) kp::gemm_nn_acc(g.data, b.data, da->data, a.rows, b.rows, a.cols);
      if (Matrix* db = target(n.in1)) kp::gemm_tn_acc(g.data, a.data, db->data, b.rows, a.rows, a.cols);
      break;
    }

    case OpKind::transpose: {
      if (Matrix* da = target(n.in0)) {
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < g.cols; ++c) (*da)(c, r) += g(r, c);
      }
      break;
    }

    case OpKind::add: {
      for (NodeId id : {n.in0, n.in1}) {
        if (Matrix* d = target(id))
          for (std::size_t i = 0; i < g.size(); ++i) d->data[i] += g.data[i];
      }
      break;
    }

    case OpKind::add_row: {
      if (Matrix* dx = target(n.in0))
        for (std::size_t i = 0; i < g.size(); ++i) dx->data[i] += g.data[i];
      if (Matrix* db = target(n.in1))
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < g.cols; ++c) db->data[c] += g(r, c);
      break;
    }

    case OpKind::scale: {
      if (Matrix* dx = target(n.in0))
        for (std::size_t i = 0; i < g.size(); ++i) dx->data[i] += n.scalar * g.data[i];
      break;
    }

    case OpKind::activation: {
      Matrix* dx = target(n.in0);
      if (!dx) break;
      const double fault = faulty_backward_ ? 1.5 : 1.0;
      switch (static_cast<Activation>(n.kind)) {
        case Activation::identity:
          for (std::size_t i = 0; i < g.size(); ++i) dx->data[i] += fault * g.data[i];
          break;
        case Activation::tanh:
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = n.value.data[i];
            dx->data[i] += fault * g.data[i] * (1.0 - y * y);
          }
          break;
        case Activation::relu: {
          const Matrix& x = value_of(n.in0);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (x.data[i] > 0.0) dx->data[i] += fault * g.data[i];
          break;
        }
      }
      break;
    }

    case OpKind::softmax: {
      Matrix* dx = target(n.in0);
      if (!dx) break;
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g.data[i] * n.value.data[i];
      for (std::size_t i = 0; i < g.size(); ++i) dx->data[i] += n.value.data[i] * (g.data[i] - dot);
      break;
    }

    case OpKind::reduce: {
      Matrix* dx = target(n.in0);
      if (!dx) break;
      const std::size_t k = dx->rows;
      switch (static_cast<Reduction>(n.kind)) {
        case Reduction::sum:
        case Reduction::mean: {
          const double f = static_cast<Reduction>(n.kind) == Reduction::mean ? 1.0 / static_cast<double>(k) : 1.0;
          for (std::size_t r = 0; r < k; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) (*dx)(r, c) += f * g.data[c];
          break;
        }
        case Reduction::max:
          for (std::size_t c = 0; c < g.cols; ++c) (*dx)(n.index[c], c) += g.data[c];
          break;
      }
      break;
    }

    case OpKind::sum_all: {
      if (Matrix* dx = target(n.in0))
        for (double& d : dx->data) d += g.data[0];
      break;
    }

    case OpKind::cross_entropy: {
      Matrix* dp = target(n.in0);
      if (!dp) break;
      const double p = value_of(n.in0).data[n.index[0]];
      if (p > kProbFloor) dp->data[n.index[0]] += -g.data[0] / p;
      break;
    }

    case OpKind::dropout: {
      if (Matrix* dx = target(n.in0))
        for (std::size_t i = 0; i < g.size(); ++i) dx->data[i] += g.data[i] * n.mask.data[i];
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Graph* common_graph(Tensor a, Tensor b) {
  if (!a.valid() || !b.valid()) fail(ErrorKind::contract, "use of an unbound tensor");
  if (a.graph() != b.graph()) fail(ErrorKind::contract, "tensors from different graphs");
  return a.graph();
}

Graph* graph_of(Tensor a) {
  if (!a.valid()) fail(ErrorKind::contract, "use of an unbound tensor");
  return a.graph();
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  Graph* g = common_graph(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols != bv.rows) {
    fail(ErrorKind::dimension, "matmul shape mismatch: " + shape_str(av) + " * " + shape_str(bv));
  }
  Graph::Node n;
  n.op = OpKind::matmul;
  n.in0 = a.id();
  n.in1 = b.id();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = Matrix(av.rows, bv.cols);
  kp::gemm_nn_acc(av.data, bv.data, n.value.data, av.rows, av.cols, bv.cols);
  return g->push(std::move(n));
}

Tensor matmul_nt(Tensor a, Tensor b) {
  Graph* g = common_graph(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols != bv.cols) {
    fail(ErrorKind::dimension,
         "matmul_nt shape mismatch: " + shape_str(av) + " * " + shape_str(bv) + "^T");
  }
  Graph::Node n;
  n.op = OpKind::matmul_nt;
  n.in0 = a.id();
  n.in1 = b.id();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = Matrix(av.rows, bv.rows);
  kp::gemm_nt_acc(av.data, bv.data, n.value.data, av.rows, av.cols, bv.rows);
  return g->push(std::move(n));
}

Tensor transpose(Tensor a) {
  Graph* g = graph_of(a);
  const Matrix& av = a.value();
  Graph::Node n;
  n.op = OpKind::transpose;
  n.in0 = a.id();
  n.requires_grad = a.requires_grad();
  n.value = Matrix(av.cols, av.rows);
  for (std::size_t r = 0; r < av.rows; ++r)
    for (std::size_t c = 0; c < av.cols; ++c) n.value(c, r) = av(r, c);
  return g->push(std::move(n));
}

Tensor add(Tensor a, Tensor b) {
  Graph* g = common_graph(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) {
    fail(ErrorKind::dimension, "add shape mismatch: " + shape_str(av) + " + " + shape_str(bv));
  }
  Graph::Node n;
  n.op = OpKind::add;
  n.in0 = a.id();
  n.in1 = b.id();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = av;
  for (std::size_t i = 0; i < bv.size(); ++i) n.value.data[i] += bv.data[i];
  return g->push(std::move(n));
}

Tensor add_row(Tensor x, Tensor bias) {
  Graph* g = common_graph(x, bias);
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows != 1 || bv.cols != xv.cols) {
    fail(ErrorKind::dimension, "row bias " + shape_str(bv) + " does not fit " + shape_str(xv));
  }
  Graph::Node n;
  n.op = OpKind::add_row;
  n.in0 = x.id();
  n.in1 = bias.id();
  n.requires_grad = x.requires_grad() || bias.requires_grad();
  n.value = xv;
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = 0; c < xv.cols; ++c) n.value(r, c) += bv.data[c];
  return g->push(std::move(n));
}

Tensor scale(Tensor x, double factor) {
  Graph* g = graph_of(x);
  Graph::Node n;
  n.op = OpKind::scale;
  n.in0 = x.id();
  n.requires_grad = x.requires_grad();
  n.scalar = factor;
  n.value = x.value();
  for (double& v : n.value.data) v *= factor;
  return g->push(std::move(n));
}

Tensor activate(Tensor x, Activation kind) {
  Graph* g = graph_of(x);
  Graph::Node n;
  n.op = OpKind::activation;
  n.in0 = x.id();
  n.requires_grad = x.requires_grad();
  n.kind = static_cast<std::uint8_t>(kind);
  n.value = x.value();
  switch (kind) {
    case Activation::identity: break;
    case Activation::tanh:
      for (double& v : n.value.data) v = std::tanh(v);
      break;
    case Activation::relu:
      for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
      break;
  }
  return g->push(std::move(n));
}

Tensor softmax(Tensor x) {
  Graph* g = graph_of(x);
  const Matrix& xv = x.value();
  if (xv.rows != 1 && xv.cols != 1) {
    fail(ErrorKind::dimension, "softmax expects a row or column vector, got " + shape_str(xv));
  }
  if (xv.empty()) fail(ErrorKind::empty_bag, "softmax over zero entries");
  if (!xv.all_finite()) fail(ErrorKind::numeric, "softmax input is not finite");
  Graph::Node n;
  n.op = OpKind::softmax;
  n.in0 = x.id();
  n.requires_grad = x.requires_grad();
  n.value = xv;
  const double mx = *std::max_element(xv.data.begin(), xv.data.end());
  for (double& v : n.value.data) v = std::exp(v - mx);
  // Summing in sorted order makes the normaliser independent of entry order,
  // so permuting the inputs permutes the outputs bit for bit.
  std::vector<double> sorted = n.value.data;
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  for (double v : sorted) total += v;
  for (double& v : n.value.data) v /= total;
  return g->push(std::move(n));
}

Tensor reduce(Tensor x, Reduction kind) {
  Graph* g = graph_of(x);
  const Matrix& xv = x.value();
  if (xv.rows == 0) fail(ErrorKind::empty_bag, "reduction over an empty instance axis");
  Graph::Node n;
  n.op = OpKind::reduce;
  n.in0 = x.id();
  n.requires_grad = x.requires_grad();
  n.kind = static_cast<std::uint8_t>(kind);
  n.value = Matrix(1, xv.cols);
  switch (kind) {
    case Reduction::sum:
    case Reduction::mean:
      for (std::size_t r = 0; r < xv.rows; ++r)
        for (std::size_t c = 0; c < xv.cols; ++c) n.value.data[c] += xv(r, c);
      if (kind == Reduction::mean)
        for (double& v : n.value.data) v /= static_cast<double>(xv.rows);
      break;
    case Reduction::max:
      n.index.assign(xv.cols, 0);
      for (std::size_t c = 0; c < xv.cols; ++c) {
        std::size_t best = 0;
        for (std::size_t r = 1; r < xv.rows; ++r)
          if (xv(r, c) > xv(best, c)) best = r;
        n.index[c] = best;
        n.value.data[c] = xv(best, c);
      }
      break;
  }
  return g->push(std::move(n));
}

Tensor sum(Tensor x) {
  Graph* g = graph_of(x);
  Graph::Node n;
  n.op = OpKind::sum_all;
  n.in0 = x.id();
  n.requires_grad = x.requires_grad();
  double total = 0.0;
  for (double v : x.value().data) total += v;
  n.value = Matrix(1, 1, total);
  return g->push(std::move(n));
}

Tensor cross_entropy(Tensor prob, std::size_t target) {
  Graph* g = graph_of(prob);
  const Matrix& pv = prob.value();
  if (pv.rows != 1 && pv.cols != 1) {
    fail(ErrorKind::dimension, "cross_entropy expects a probability vector, got " + shape_str(pv));
  }
  if (target >= pv.size()) {
    fail(ErrorKind::validation, "target class " + std::to_string(target) + " out of range for " +
                                    std::to_string(pv.size()) + " classes");
  }
  Graph::Node n;
  n.op = OpKind::cross_entropy;
  n.in0 = prob.id();
  n.requires_grad = prob.requires_grad();
  n.index = {target};
  n.value = Matrix(1, 1, -std::log(std::max(pv.data[target], kProbFloor)));
  return g->push(std::move(n));
}

Tensor dropout(Tensor x, double p, Rng& rng) {
  Graph* g = graph_of(x);
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::validation, "dropout probability must be in [0, 1)");
  const Matrix& xv = x.value();
  Graph::Node n;
  n.op = OpKind::dropout;
  n.in0 = x.id();
  n.requires_grad = x.requires_grad();
  n.mask = Matrix(xv.rows, xv.cols, 1.0);
  if (p > 0.0) {
    const double keep = 1.0 / (1.0 - p);
    for (double& m : n.mask.data) m = rng.uniform() < p ? 0.0 : keep;
  }
  n.value = xv;
  for (std::size_t i = 0; i < xv.size(); ++i) n.value.data[i] *= n.mask.data[i];
  return g->push(std::move(n));
}

}  // namespace mil::ad

#pragma once

// Tape-based reverse-mode differentiation over small dense tensors.
//
// A Graph records every primitive evaluated through it. Parameter leaves
// write their gradients straight into Parameter::grad, so one Graph per
// training example (or per generation) is the intended lifetime. Graphs
// built with GradMode::off record no closures and never touch gradients;
// those are safe to run concurrently over shared parameters.

#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "condiv/tensor.hpp"

namespace condiv {

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double scalar() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

enum class GradMode { on, off };

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor& out_grad)>;

  explicit Graph(GradMode mode = GradMode::on) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return mode_ == GradMode::on; }

  Var constant(Tensor value);
  Var zeros(std::size_t n) { return constant(Tensor({n, 1})); }
  /// Leaf owning its own gradient (used by gradient checks on free inputs).
  Var input(Tensor value);
  /// Leaf whose gradient accumulates into p.grad.
  Var param(Parameter& p);
  /// Read-only leaf; never receives gradient.
  Var param(const Parameter& p);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Runs reverse accumulation from a scalar output (seed 1.0).
  void backward(Var loss);
  /// Gradient of an input() leaf after backward(); zeros when backward
  /// never reached it.
  Tensor grad(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Used by primitive implementations.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Tensor value, std::span<const Var> inputs, Backward fn);
  Tensor& grad_accumulator(int id);

 private:
  struct Node {
    Tensor own;
    const Parameter* source = nullptr;
    Parameter* sink = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  GradMode mode_;
  std::deque<Node> nodes_;
};

/// Thrown when attention (or softmax) is asked to normalize over nothing.
class EmptySourceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- primitive catalog -----------------------------------------------------

std::span<const std::string_view> primitive_catalog();

Var matvec(Var w, Var x);            // [m x n]·[n] -> [m]
Var matvec_t(Var a, Var w);          // [n x k]^T·[n] -> [k]
Var matmul_nt(Var a, Var w);         // [n x k]·[a x k]^T -> [n x a]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_rowwise(Var m, Var v);       // [n x a] + broadcast [a]
Var scale(Var x, Var s);             // scalar Var times tensor
Var scale(Var x, double c);
Var affine(Var x, double a, double b);  // a*x + b
Var sigmoid(Var x);
Var tanh(Var x);
Var log(Var x);
/// log(max(x, floor)); zero gradient where the floor is active.
Var log_floor(Var x, double floor);
Var softmax(Var x);
/// Masked entries get exactly zero weight; at least one entry must be active.
Var softmax(Var x, const std::vector<bool>& mask);
Var concat(std::span<const Var> parts);
Var stack_rows(std::span<const Var> rows);
Var row(Var m, std::size_t r);
Var lookup(Var table, std::size_t r);
Var scatter_add(Var weights, std::span<const int> index, std::size_t out_size);
Var mean(std::span<const Var> xs);
Var sum(Var x);
Var pick(Var x, std::size_t i);
Var pad(Var x, std::size_t n);
Var divide(Var x, Var s);
Var add_n(std::span<const Var> xs);
/// Binary cross-entropy of probability p (scalar) against target in [0,1];
/// p is clipped to [clip, 1 - clip] and the gradient is zero where clipped.
Var binary_cross_entropy(Var p, double target, double clip = 1e-7);

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

}  // namespace condiv

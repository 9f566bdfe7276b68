#include "condiv/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace condiv {

namespace {

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

void require_vector(std::string_view op, const Shape& s) {
  if (!s.is_vector()) throw ShapeError(std::string(op) + ": expected a vector, got " + s.str());
}

void require_scalar(std::string_view op, const Shape& s) {
  if (!s.is_scalar()) throw ShapeError(std::string(op) + ": expected a scalar, got " + s.str());
}

void require_same(std::string_view op, const Shape& a, const Shape& b) {
  if (!(a == b)) shape_fail(op, a, b);
}

Graph& graph_of(std::span<const Var> xs, std::string_view op) {
  if (xs.empty()) throw ShapeError(std::string(op) + ": no operands");
  return xs.front().graph();
}

}  // namespace

// ---- Var / Graph -----------------------------------------------------------

const Tensor& Var::value() const { return graph_->value(*this); }

double Var::scalar() const {
  const Tensor& t = value();
  require_scalar("scalar", t.shape());
  return t[0];
}

Var Graph::constant(Tensor value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Tensor value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = grad_enabled();
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  Node n;
  n.source = &p;
  if (grad_enabled()) {
    n.sink = &p;
    n.requires_grad = true;
    if (!(p.grad.shape() == p.value.shape())) p.grad = Tensor(p.value.shape());
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const Parameter& p) {
  Node n;
  n.source = &p;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Graph::value(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.source ? n.source->value : n.own;
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Graph::record(Tensor value, std::span<const Var> inputs, Backward fn) {
  Node n;
  n.own = std::move(value);
  if (grad_enabled()) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](Var v) { return nodes_[v.id()].requires_grad; });
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_accumulator(int id) {
  Node& n = nodes_[id];
  if (n.sink) return n.sink->grad;
  if (!n.has_grad) {
    n.grad = Tensor(n.own.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (!grad_enabled()) throw std::logic_error("backward on a graph built with GradMode::off");
  require_scalar("backward", value(loss).shape());
  if (!nodes_[loss.id()].requires_grad) return;
  grad_accumulator(loss.id())[0] += 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.sink) return n.sink->grad;
  if (!n.has_grad) {
    if (!n.requires_grad) throw std::logic_error("node does not require gradient");
    return Tensor(n.own.shape());
  }
  return n.grad;
}

// ---- primitives --------------------------------------------------------------

std::span<const std::string_view> primitive_catalog() {
  static constexpr std::array<std::string_view, 26> kNames = {
      "matvec", "matvec_t", "matmul_nt", "add",     "sub",       "mul",
      "add_rowwise", "scale", "affine", "sigmoid", "tanh",      "log",
      "softmax", "concat",  "stack_rows", "row",   "lookup",    "scatter_add",
      "mean",    "sum",     "pick",      "pad",     "divide",    "add_n",
      "binary_cross_entropy", "log_floor"};
  return kNames;
}

Var matvec(Var w, Var x) {
  Graph& g = w.graph();
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  require_vector("matvec", X.shape());
  const std::size_t m = W.shape().rows, n = W.shape().cols;
  if (X.size() != n) shape_fail("matvec", W.shape(), X.shape());
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    const double* wr = W.data() + i * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += wr[j] * X[j];
    out[i] = acc;
  }
  return g.record(std::move(out), {w, x}, [w, x, m, n](Graph& g, const Tensor& go) {
    const Tensor& W = g.value(w);
    const Tensor& X = g.value(x);
    if (g.requires_grad(w)) {
      Tensor& gw = g.grad_accumulator(w.id());
      for (std::size_t i = 0; i < m; ++i) {
        const double gi = go[i];
        if (gi == 0.0) continue;
        double* row = gw.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += gi * X[j];
      }
    }
    if (g.requires_grad(x)) {
      Tensor& gx = g.grad_accumulator(x.id());
      for (std::size_t i = 0; i < m; ++i) {
        const double gi = go[i];
        if (gi == 0.0) continue;
        const double* wr = W.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gx[j] += gi * wr[j];
      }
    }
  });
}

Var matvec_t(Var a, Var w) {
  Graph& g = a.graph();
  const Tensor& A = a.value();
  const Tensor& Wt = w.value();
  require_vector("matvec_t", Wt.shape());
  const std::size_t n = A.shape().rows, k = A.shape().cols;
  if (Wt.size() != n) shape_fail("matvec_t", A.shape(), Wt.shape());
  Tensor out({k, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = Wt[i];
    const double* ar = A.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) out[j] += wi * ar[j];
  }
  return g.record(std::move(out), {a, w}, [a, w, n, k](Graph& g, const Tensor& go) {
    const Tensor& A = g.value(a);
    const Tensor& Wt = g.value(w);
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad_accumulator(a.id());
      for (std::size_t i = 0; i < n; ++i) {
        double* row = ga.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) row[j] += Wt[i] * go[j];
      }
    }
    if (g.requires_grad(w)) {
      Tensor& gw = g.grad_accumulator(w.id());
      for (std::size_t i = 0; i < n; ++i) {
        const double* ar = A.data() + i * k;
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += ar[j] * go[j];
        gw[i] += acc;
      }
    }
  });
}

Var matmul_nt(Var a, Var w) {
  Graph& g = a.graph();
  const Tensor& A = a.value();
  const Tensor& W = w.value();
  const std::size_t n = A.shape().rows, k = A.shape().cols, m = W.shape().rows;
  if (W.shape().cols != k) shape_fail("matmul_nt", A.shape(), W.shape());
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = A.data() + i * k;
    for (std::size_t r = 0; r < m; ++r) {
      const double* wr = W.data() + r * k;
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += ar[j] * wr[j];
      out.at(i, r) = acc;
    }
  }
  return g.record(std::move(out), {a, w}, [a, w, n, k, m](Graph& g, const Tensor& go) {
    const Tensor& A = g.value(a);
    const Tensor& W = g.value(w);
    const bool ga_on = g.requires_grad(a), gw_on = g.requires_grad(w);
    Tensor* ga = ga_on ? &g.grad_accumulator(a.id()) : nullptr;
    Tensor* gw = gw_on ? &g.grad_accumulator(w.id()) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < m; ++r) {
        const double gir = go.at(i, r);
        if (gir == 0.0) continue;
        if (ga) {
          double* dst = ga->data() + i * k;
          const double* wr = W.data() + r * k;
          for (std::size_t j = 0; j < k; ++j) dst[j] += gir * wr[j];
        }
        if (gw) {
          double* dst = gw->data() + r * k;
          const double* ar = A.data() + i * k;
          for (std::size_t j = 0; j < k; ++j) dst[j] += gir * ar[j];
        }
      }
    }
  });
}

namespace {

template <class F, class DA, class DB>
Var binary_elementwise(std::string_view name, Var a, Var b, F f, DA da, DB db) {
  Graph& g = a.graph();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same(name, A.shape(), B.shape());
  Tensor out(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], B[i]);
  return g.record(std::move(out), {a, b}, [a, b, da, db](Graph& g, const Tensor& go) {
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad_accumulator(a.id());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * da(A[i], B[i]);
    }
    if (g.requires_grad(b)) {
      Tensor& gb = g.grad_accumulator(b.id());
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * db(A[i], B[i]);
    }
  });
}

template <class F, class DF>
Var unary_elementwise(Var x, F f, DF df) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(X[i]);
  const int self = static_cast<int>(g.node_count());
  return g.record(std::move(out), {x}, [x, df, self](Graph& g, const Tensor& go) {
    const Tensor& X = g.value(x);
    const Tensor& Y = g.value(Var(&g, self));
    Tensor& gx = g.grad_accumulator(x.id());
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * df(X[i], Y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var add_rowwise(Var m, Var v) {
  Graph& g = m.graph();
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  require_vector("add_rowwise", V.shape());
  const std::size_t n = M.shape().rows, a = M.shape().cols;
  if (V.size() != a) shape_fail("add_rowwise", M.shape(), V.shape());
  Tensor out(M.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < a; ++j) out.at(i, j) = M.at(i, j) + V[j];
  return g.record(std::move(out), {m, v}, [m, v, n, a](Graph& g, const Tensor& go) {
    if (g.requires_grad(m)) {
      Tensor& gm = g.grad_accumulator(m.id());
      for (std::size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
    }
    if (g.requires_grad(v)) {
      Tensor& gv = g.grad_accumulator(v.id());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < a; ++j) gv[j] += go.at(i, j);
    }
  });
}

Var scale(Var x, Var s) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  require_scalar("scale", s.value().shape());
  const double c = s.value()[0];
  Tensor out(X.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * X[i];
  return g.record(std::move(out), {x, s}, [x, s](Graph& g, const Tensor& go) {
    const Tensor& X = g.value(x);
    const double c = g.value(s)[0];
    if (g.requires_grad(x)) {
      Tensor& gx = g.grad_accumulator(x.id());
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += c * go[i];
    }
    if (g.requires_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < go.size(); ++i) acc += X[i] * go[i];
      g.grad_accumulator(s.id())[0] += acc;
    }
  });
}

Var scale(Var x, double c) { return affine(x, c, 0.0); }

Var affine(Var x, double a, double b) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * X[i] + b;
  return g.record(std::move(out), {x}, [x, a](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_accumulator(x.id());
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += a * go[i];
  });
}

Var sigmoid(Var x) {
  return unary_elementwise(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary_elementwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var log(Var x) {
  return unary_elementwise(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var log_floor(Var x, double floor) {
  return unary_elementwise(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v < floor ? 0.0 : 1.0 / v; });
}

Var softmax(Var x) { return softmax(x, std::vector<bool>(x.size(), true)); }

Var softmax(Var x, const std::vector<bool>& mask) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  require_vector("softmax", X.shape());
  if (X.size() == 0) throw EmptySourceError("softmax over an empty axis");
  if (mask.size() != X.size())
    throw ShapeError("softmax: mask length " + std::to_string(mask.size()) + " vs " + X.shape().str());
  double mx = -INFINITY;
  for (std::size_t i = 0; i < X.size(); ++i)
    if (mask[i]) mx = std::max(mx, X[i]);
  if (mx == -INFINITY) throw EmptySourceError("softmax: every position is masked");
  Tensor out(X.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (!mask[i]) continue;
    out[i] = std::exp(X[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < X.size(); ++i) out[i] /= z;
  const int self = static_cast<int>(g.node_count());
  return g.record(std::move(out), {x}, [x, self](Graph& g, const Tensor& go) {
    const Tensor& Y = g.value(Var(&g, self));
    double dot = 0.0;
    for (std::size_t i = 0; i < Y.size(); ++i) dot += go[i] * Y[i];
    Tensor& gx = g.grad_accumulator(x.id());
    for (std::size_t i = 0; i < Y.size(); ++i) gx[i] += Y[i] * (go[i] - dot);
  });
}

Var concat(std::span<const Var> parts) {
  Graph& g = graph_of(parts, "concat");
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_vector("concat", p.shape());
    total += p.size();
  }
  Tensor out({total, 1});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    std::copy(P.data(), P.data() + P.size(), out.data() + off);
    off += P.size();
  }
  std::vector<Var> in(parts.begin(), parts.end());
  return g.record(std::move(out), parts, [in](Graph& g, const Tensor& go) {
    std::size_t off = 0;
    for (const Var& p : in) {
      const std::size_t n = g.value(p).size();
      if (g.requires_grad(p)) {
        Tensor& gp = g.grad_accumulator(p.id());
        for (std::size_t i = 0; i < n; ++i) gp[i] += go[off + i];
      }
      off += n;
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  Graph& g = graph_of(rows, "stack_rows");
  const std::size_t k = rows.front().size();
  for (const Var& r : rows) {
    require_vector("stack_rows", r.shape());
    if (r.size() != k) shape_fail("stack_rows", rows.front().shape(), r.shape());
  }
  Tensor out({rows.size(), k});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& R = rows[i].value();
    std::copy(R.data(), R.data() + k, out.data() + i * k);
  }
  std::vector<Var> in(rows.begin(), rows.end());
  return g.record(std::move(out), rows, [in, k](Graph& g, const Tensor& go) {
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (!g.requires_grad(in[i])) continue;
      Tensor& gr = g.grad_accumulator(in[i].id());
      for (std::size_t j = 0; j < k; ++j) gr[j] += go[i * k + j];
    }
  });
}

Var row(Var m, std::size_t r) {
  Graph& g = m.graph();
  const Tensor& M = m.value();
  if (r >= M.shape().rows)
    throw ShapeError("row: index " + std::to_string(r) + " out of range for " + M.shape().str());
  const std::size_t k = M.shape().cols;
  auto src = M.row(r);
  Tensor out({k, 1}, std::vector<double>(src.begin(), src.end()));
  return g.record(std::move(out), {m}, [m, r, k](Graph& g, const Tensor& go) {
    Tensor& gm = g.grad_accumulator(m.id());
    for (std::size_t j = 0; j < k; ++j) gm[r * k + j] += go[j];
  });
}

Var lookup(Var table, std::size_t r) { return row(table, r); }

Var scatter_add(Var weights, std::span<const int> index, std::size_t out_size) {
  Graph& g = weights.graph();
  const Tensor& W = weights.value();
  require_vector("scatter_add", W.shape());
  if (index.size() != W.size())
    throw ShapeError("scatter_add: " + std::to_string(index.size()) + " indices for " + W.shape().str());
  Tensor out({out_size, 1});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= out_size)
      throw ShapeError("scatter_add: index " + std::to_string(index[i]) + " outside [0," +
                       std::to_string(out_size) + ")");
    out[static_cast<std::size_t>(index[i])] += W[i];
  }
  std::vector<int> idx(index.begin(), index.end());
  return g.record(std::move(out), {weights}, [weights, idx](Graph& g, const Tensor& go) {
    Tensor& gw = g.grad_accumulator(weights.id());
    for (std::size_t i = 0; i < idx.size(); ++i) gw[i] += go[static_cast<std::size_t>(idx[i])];
  });
}

Var mean(std::span<const Var> xs) {
  Graph& g = graph_of(xs, "mean");
  const Shape s = xs.front().shape();
  Tensor out(s);
  for (const Var& x : xs) {
    require_same("mean", s, x.shape());
    const Tensor& X = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += X[i];
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  std::vector<Var> in(xs.begin(), xs.end());
  return g.record(std::move(out), xs, [in, inv](Graph& g, const Tensor& go) {
    for (const Var& x : in) {
      if (!g.requires_grad(x)) continue;
      Tensor& gx = g.grad_accumulator(x.id());
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += inv * go[i];
    }
  });
}

Var sum(Var x) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) acc += X[i];
  return g.record(Tensor::scalar(acc), {x}, [x](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_accumulator(x.id());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[0];
  });
}

Var pick(Var x, std::size_t i) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  if (i >= X.size())
    throw ShapeError("pick: index " + std::to_string(i) + " out of range for " + X.shape().str());
  return g.record(Tensor::scalar(X[i]), {x}, [x, i](Graph& g, const Tensor& go) {
    g.grad_accumulator(x.id())[i] += go[0];
  });
}

Var pad(Var x, std::size_t n) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  require_vector("pad", X.shape());
  if (n < X.size()) throw ShapeError("pad: target length below " + X.shape().str());
  Tensor out({n, 1});
  std::copy(X.data(), X.data() + X.size(), out.data());
  return g.record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_accumulator(x.id());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

Var divide(Var x, Var s) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  require_scalar("divide", s.value().shape());
  const double d = s.value()[0];
  Tensor out(X.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] / d;
  const int self = static_cast<int>(g.node_count());
  return g.record(std::move(out), {x, s}, [x, s, self](Graph& g, const Tensor& go) {
    const double d = g.value(s)[0];
    if (g.requires_grad(x)) {
      Tensor& gx = g.grad_accumulator(x.id());
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / d;
    }
    if (g.requires_grad(s)) {
      const Tensor& Y = g.value(Var(&g, self));
      double acc = 0.0;
      for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * Y[i];
      g.grad_accumulator(s.id())[0] -= acc / d;
    }
  });
}

Var add_n(std::span<const Var> xs) {
  Graph& g = graph_of(xs, "add_n");
  const Shape s = xs.front().shape();
  Tensor out(s);
  for (const Var& x : xs) {
    require_same("add_n", s, x.shape());
    const Tensor& X = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += X[i];
  }
  std::vector<Var> in(xs.begin(), xs.end());
  return g.record(std::move(out), xs, [in](Graph& g, const Tensor& go) {
    for (const Var& x : in) {
      if (!g.requires_grad(x)) continue;
      Tensor& gx = g.grad_accumulator(x.id());
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
  });
}

Var binary_cross_entropy(Var p, double target, double clip) {
  Graph& g = p.graph();
  require_scalar("binary_cross_entropy", p.shape());
  const double raw = p.value()[0];
  const double c = std::clamp(raw, clip, 1.0 - clip);
  const double loss = -target * std::log(c) - (1.0 - target) * std::log(1.0 - c);
  return g.record(Tensor::scalar(loss), {p}, [p, target, clip](Graph& g, const Tensor& go) {
    const double raw = g.value(p)[0];
    if (raw < clip || raw > 1.0 - clip) return;
    g.grad_accumulator(p.id())[0] += go[0] * (-target / raw + (1.0 - target) / (1.0 - raw));
  });
}

}  // namespace condiv

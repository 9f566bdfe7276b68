#include "condiv/nn.hpp"

#include <algorithm>
#include <cmath>

namespace condiv {

GruParams::GruParams(const std::string& prefix, std::size_t input, std::size_t hidden)
    : wz(prefix + ".wz", {hidden, input}),
      wr(prefix + ".wr", {hidden, input}),
      wn(prefix + ".wn", {hidden, input}),
      uz(prefix + ".uz", {hidden, hidden}),
      ur(prefix + ".ur", {hidden, hidden}),
      un(prefix + ".un", {hidden, hidden}),
      bz(prefix + ".bz", {hidden, 1}),
      br(prefix + ".br", {hidden, 1}),
      bn(prefix + ".bn", {hidden, 1}) {}

std::vector<Parameter*> GruParams::parameters() {
  return {&wz, &wr, &wn, &uz, &ur, &un, &bz, &br, &bn};
}

std::vector<const Parameter*> GruParams::parameters() const {
  return {&wz, &wr, &wn, &uz, &ur, &un, &bz, &br, &bn};
}

Var gru_cell(const GruVars& p, Var x, Var h_prev) {
  Var z = sigmoid(add(add(matvec(p.wz, x), matvec(p.uz, h_prev)), p.bz));
  Var r = sigmoid(add(add(matvec(p.wr, x), matvec(p.ur, h_prev)), p.br));
  Var n = tanh(add(add(matvec(p.wn, x), matvec(p.un, mul(r, h_prev))), p.bn));
  // (1 - z) * n + z * h == n + z * (h - n)
  return add(n, mul(z, sub(h_prev, n)));
}

AttentionParams::AttentionParams(const std::string& prefix, std::size_t key_dim,
                                 std::size_t query_dim, std::size_t attn_dim)
    : key_proj(prefix + ".key_proj", {attn_dim, key_dim}),
      query_proj(prefix + ".query_proj", {attn_dim, query_dim}),
      score(prefix + ".score", {attn_dim, 1}) {}

std::vector<Parameter*> AttentionParams::parameters() { return {&key_proj, &query_proj, &score}; }

std::vector<const Parameter*> AttentionParams::parameters() const {
  return {&key_proj, &query_proj, &score};
}

Var project_keys(const AttentionVars& p, Var keys) { return matmul_nt(keys, p.key_proj); }

AttentionResult additive_attention(const AttentionVars& p, Var keys, Var projected_keys, Var query,
                                   const std::vector<bool>& mask) {
  const std::size_t n = keys.shape().rows;
  if (n == 0) throw EmptySourceError("attention over an empty source");
  Var hidden = tanh(add_rowwise(projected_keys, matvec(p.query_proj, query)));
  Var scores = matvec(hidden, p.score);
  Var weights = mask.empty() ? softmax(scores) : softmax(scores, mask);
  return {weights, matvec_t(keys, weights)};
}

AttentionResult additive_attention(const AttentionVars& p, Var keys, Var query,
                                   const std::vector<bool>& mask) {
  if (keys.shape().rows == 0) throw EmptySourceError("attention over an empty source");
  return additive_attention(p, keys, project_keys(p, keys), query, mask);
}

void init_uniform(std::span<Parameter* const> params, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Parameter* p : params) {
    for (double& v : p->value.values()) v = dist(rng);
    p->grad = Tensor(p->value.shape());
  }
}

// ---- gradient verification ---------------------------------------------------

std::vector<Tensor> analytic_gradient(const LossBuilder& f, std::span<Parameter* const> params) {
  for (Parameter* p : params) p->grad = Tensor(p->value.shape());
  Graph g(GradMode::on);
  Var loss = f(g);
  if (!loss.shape().is_scalar())
    throw ShapeError("gradient check needs a scalar loss, got " + loss.shape().str());
  g.backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Parameter* p : params) out.push_back(p->grad);
  return out;
}

std::vector<Tensor> numeric_gradient(const LossBuilder& f, std::span<Parameter* const> params,
                                     double eps) {
  auto eval = [&f]() {
    Graph g(GradMode::off);
    Var loss = f(g);
    if (!loss.shape().is_scalar())
      throw ShapeError("gradient check needs a scalar loss, got " + loss.shape().str());
    return loss.scalar();
  };
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Parameter* p : params) {
    Tensor grad(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = eval();
      p->value[i] = orig - eps;
      const double down = eval();
      p->value[i] = orig;
      grad[i] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(grad));
  }
  return out;
}

GradReport compare_gradients(std::span<Parameter* const> params, std::span<const Tensor> analytic,
                             std::span<const Tensor> numeric, const GradCheckOptions& opt) {
  GradReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradReport::Entry e;
    e.name = params[k]->name;
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      const double a = analytic[k][i], n = numeric[k][i];
      const double abs_err = std::abs(a - n);
      const double denom = std::max(std::abs(a), std::abs(n));
      const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
      e.max_abs_error = std::max(e.max_abs_error, abs_err);
      if (abs_err > opt.abs_floor) {
        e.max_rel_error = std::max(e.max_rel_error, rel_err);
        if (rel_err > opt.rel_tol) e.pass = false;
      }
    }
    report.pass = report.pass && e.pass;
    report.entries.push_back(std::move(e));
  }
  return report;
}

GradReport grad_check(const LossBuilder& f, std::span<Parameter* const> params,
                      const GradCheckOptions& opt) {
  auto analytic = analytic_gradient(f, params);
  auto numeric = numeric_gradient(f, params, opt.eps);
  return compare_gradients(params, analytic, numeric, opt);
}

}  // namespace condiv

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "condiv/autodiff.hpp"

namespace condiv {

/// Weights of one GRU direction: gates z (update), r (reset), n (candidate).
struct GruParams {
  Parameter wz, wr, wn;  // [hidden x input]
  Parameter uz, ur, un;  // [hidden x hidden]
  Parameter bz, br, bn;  // [hidden]

  GruParams() = default;
  GruParams(const std::string& prefix, std::size_t input, std::size_t hidden);

  std::size_t input_dim() const { return wz.value.shape().cols; }
  std::size_t hidden_dim() const { return wz.value.shape().rows; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

/// GruParams bound as graph leaves.
struct GruVars {
  Var wz, wr, wn, uz, ur, un, bz, br, bn;
};

template <class P>
GruVars bind_gru(Graph& g, P& p) {
  return {g.param(p.wz), g.param(p.wr), g.param(p.wn), g.param(p.uz), g.param(p.ur),
          g.param(p.un), g.param(p.bz), g.param(p.br), g.param(p.bn)};
}

/// h' = (1 - z) * n + z * h_prev with
/// z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
/// n = tanh(Wn x + Un (r * h) + bn).
Var gru_cell(const GruVars& p, Var x, Var h_prev);

/// Additive scorer: score_i = v . tanh(Wk key_i + Wq query).
struct AttentionParams {
  Parameter key_proj;    // [attn x key]
  Parameter query_proj;  // [attn x query]
  Parameter score;       // [attn]

  AttentionParams() = default;
  AttentionParams(const std::string& prefix, std::size_t key_dim, std::size_t query_dim,
                  std::size_t attn_dim);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct AttentionVars {
  Var key_proj, query_proj, score;
};

template <class P>
AttentionVars bind_attention(Graph& g, P& p) {
  return {g.param(p.key_proj), g.param(p.query_proj), g.param(p.score)};
}

struct AttentionResult {
  Var weights;  // simplex over the n keys
  Var context;  // sum_i weights_i * key_i
};

/// Key projections depend only on the source, so callers decoding many
/// steps against the same keys compute this once.
Var project_keys(const AttentionVars& p, Var keys);

/// keys: [n x key_dim]. An empty mask means every row is active.
/// Throws EmptySourceError when n == 0 or every row is masked.
AttentionResult additive_attention(const AttentionVars& p, Var keys, Var projected_keys, Var query,
                                   const std::vector<bool>& mask = {});
AttentionResult additive_attention(const AttentionVars& p, Var keys, Var query,
                                   const std::vector<bool>& mask = {});

/// Fills every parameter uniformly in [-bound, bound].
void init_uniform(std::span<Parameter* const> params, double bound, std::mt19937_64& rng);

// ---- gradient verification ---------------------------------------------------

struct GradReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool pass = true;
  };
  std::vector<Entry> entries;
  bool pass = true;
};

struct GradCheckOptions {
  double eps = 1e-6;
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;
};

/// Builds a scalar loss on a fresh graph from the current parameter values.
using LossBuilder = std::function<Var(Graph&)>;

std::vector<Tensor> analytic_gradient(const LossBuilder& f, std::span<Parameter* const> params);
std::vector<Tensor> numeric_gradient(const LossBuilder& f, std::span<Parameter* const> params,
                                     double eps);
GradReport compare_gradients(std::span<Parameter* const> params, std::span<const Tensor> analytic,
                             std::span<const Tensor> numeric, const GradCheckOptions& opt);
/// Central-difference check of every entry of every parameter.
GradReport grad_check(const LossBuilder& f, std::span<Parameter* const> params,
                      const GradCheckOptions& opt = {});

}  // namespace condiv

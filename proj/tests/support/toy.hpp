#pragma once

#include <random>

#include "condiv/model.hpp"

namespace toy {

using namespace condiv;

// vocab 10, d = 4, E = 3, I = 3 context tokens, K = 2 facts, L = M = 2 drift words
inline ModelConfig config() {
  ModelConfig c;
  c.vocab_size = 10;
  c.embed_dim = 3;
  c.hidden = 4;
  c.n_div = 2;
  return c;
}

inline ModelParameters params(std::uint64_t seed, double bound = 0.5, ModelConfig cfg = config()) {
  ModelParameters p(cfg);
  std::mt19937_64 rng(seed);
  auto all = p.all();
  init_uniform(all, bound, rng);
  return p;
}

// fact 0 carries an out-of-vocabulary token (extended id 10)
inline ModelInput input() {
  ModelInput in;
  in.context = {5, 6, 7};
  in.facts = {{6, 10}, {8, 9}};
  in.drift_contextual = {8, 9};
  in.drift_factual = {7, 5};
  in.extended_size = 11;
  return in;
}

inline Targets targets() {
  Targets t;
  t.ids = {10, 6, Vocabulary::kEos};
  t.copy_labels = {1, 1, 0};
  t.switch_label = 1;
  return t;
}

inline LossVars forward(Graph& g, const ModelParameters& p, const ModelInput& in, const Targets& t,
                        const LossOptions& opt = {}) {
  Model m(g, p);
  auto enc = m.encode(in);
  return m.sequence_loss(enc, t, opt);
}

// Gradient-carrying variant: parameter leaves accumulate into p.grad.
inline LossVars forward_mut(Graph& g, ModelParameters& p, const ModelInput& in, const Targets& t,
                            const LossOptions& opt = {}) {
  Model m(g, p);
  auto enc = m.encode(in);
  return m.sequence_loss(enc, t, opt);
}

}  // namespace toy

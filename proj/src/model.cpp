#include "condiv/model.hpp"

#include <algorithm>
#include <cmath>

namespace condiv {

namespace {

Var sum_of(std::initializer_list<Var> xs) {
  return add_n(std::span<const Var>(xs.begin(), xs.size()));
}

std::size_t real_length(std::span<const int> ids) {
  std::size_t n = 0;
  while (n < ids.size() && ids[n] != Vocabulary::kPad) ++n;
  return n;
}

std::vector<double> to_vec(Var v) {
  if (!v.valid()) return {};
  const auto& t = v.value();
  return {t.data(), t.data() + t.size()};
}

}  // namespace

// ---- parameters -----------------------------------------------------------------

ModelParameters::ModelParameters(const ModelConfig& cfg)
    : config(cfg),
      embedding("embedding", {cfg.vocab_size, cfg.embed_dim}),
      encoder_fwd("encoder.fwd", cfg.embed_dim, cfg.hidden),
      encoder_bwd("encoder.bwd", cfg.embed_dim, cfg.hidden),
      decoder("decoder", cfg.decoder_input_dim(), cfg.hidden),
      bridge_w("bridge.w", {cfg.hidden, 2 * cfg.hidden}),
      bridge_b("bridge.b", {cfg.hidden, 1}),
      vocab_w("vocab.w", {cfg.vocab_size, cfg.hidden}),
      vocab_b("vocab.b", {cfg.vocab_size, 1}),
      switch_w("switch.w", {1, 4 * cfg.hidden}),
      switch_b("switch.b", {1, 1}),
      att_context("att.context", 2 * cfg.hidden, cfg.hidden, cfg.attn_dim()),
      att_fact_word("att.fact_word", 2 * cfg.hidden, cfg.hidden, cfg.attn_dim()),
      att_fact_sentence("att.fact_sentence", 2 * cfg.hidden, cfg.hidden, cfg.attn_dim()),
      att_drift("att.drift", cfg.embed_dim, cfg.hidden, cfg.attn_dim()),
      mix_w("mix.w", {3, cfg.mixture_input_dim()}) {
  if (cfg.vocab_size <= static_cast<std::size_t>(Vocabulary::kNumSpecials) || cfg.hidden == 0 ||
      cfg.embed_dim == 0)
    throw std::invalid_argument("model config needs vocab > specials and positive dimensions");
}

std::vector<Parameter*> ModelParameters::all() {
  std::vector<Parameter*> out{&embedding};
  for (GruParams* g : {&encoder_fwd, &encoder_bwd, &decoder})
    for (Parameter* p : g->parameters()) out.push_back(p);
  for (Parameter* p : {&bridge_w, &bridge_b, &vocab_w, &vocab_b, &switch_w, &switch_b}) out.push_back(p);
  for (AttentionParams* a : {&att_context, &att_fact_word, &att_fact_sentence, &att_drift})
    for (Parameter* p : a->parameters()) out.push_back(p);
  out.push_back(&mix_w);
  return out;
}

std::vector<const Parameter*> ModelParameters::all() const {
  auto mut = const_cast<ModelParameters*>(this)->all();
  return {mut.begin(), mut.end()};
}

Parameter* ModelParameters::find(std::string_view name) {
  for (Parameter* p : all())
    if (p->name == name) return p;
  return nullptr;
}

void ModelParameters::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto params = all();
  init_uniform(params, 0.1, rng);
}

void ModelParameters::zero_grad() {
  for (Parameter* p : all()) {
    if (p->grad.shape() == p->value.shape()) {
      p->zero_grad();
    } else {
      p->grad = Tensor(p->value.shape());
    }
  }
}

std::size_t ModelParameters::count() const {
  std::size_t n = 0;
  for (const Parameter* p : all()) n += p->value.size();
  return n;
}

// ---- inputs ------------------------------------------------------------------------

ModelInput make_model_input(const DialogueExample& example, const ExtendedVocab& ext,
                            const Vocabulary& vocab, const DriftWords& drift) {
  ModelInput in;
  in.context = ext.encode(example.joined_context, vocab);
  for (const auto& f : example.facts) in.facts.push_back(ext.encode(f, vocab));
  in.drift_contextual = vocab.encode(drift.contextual);
  in.drift_factual = vocab.encode(drift.factual);
  in.extended_size = ext.size();
  return in;
}

ModelInput model_input_from_batch(const Batch& batch, std::size_t b, const Vocabulary& vocab,
                                  const DriftWords& drift) {
  ModelInput in;
  in.context = batch.context.at(b);
  for (std::size_t k = 0; k < batch.fact_count.at(b); ++k) in.facts.push_back(batch.facts[b][k]);
  in.drift_contextual = vocab.encode(drift.contextual);
  in.drift_factual = vocab.encode(drift.factual);
  in.extended_size = batch.extended.at(b).size();
  return in;
}

std::vector<int> target_ids(const DialogueExample& example, const ExtendedVocab& ext,
                            const Vocabulary& vocab) {
  auto ids = ext.encode(example.response, vocab);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

// ---- model ---------------------------------------------------------------------------

template <class P>
void Model::bind(P& p) {
  embedding_ = g_->param(p.embedding);
  enc_fwd_ = bind_gru(*g_, p.encoder_fwd);
  enc_bwd_ = bind_gru(*g_, p.encoder_bwd);
  dec_ = bind_gru(*g_, p.decoder);
  bridge_w_ = g_->param(p.bridge_w);
  bridge_b_ = g_->param(p.bridge_b);
  vocab_w_ = g_->param(p.vocab_w);
  vocab_b_ = g_->param(p.vocab_b);
  switch_w_ = g_->param(p.switch_w);
  switch_b_ = g_->param(p.switch_b);
  mix_w_ = g_->param(p.mix_w);
  att_context_ = bind_attention(*g_, p.att_context);
  att_fact_word_ = bind_attention(*g_, p.att_fact_word);
  att_fact_sentence_ = bind_attention(*g_, p.att_fact_sentence);
  att_drift_ = bind_attention(*g_, p.att_drift);
}

Model::Model(Graph& g, ModelParameters& p) : g_(&g), cfg_(&p.config) { bind(p); }
Model::Model(Graph& g, const ModelParameters& p) : g_(&g), cfg_(&p.config) { bind(p); }

Var Model::embed(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= cfg_->vocab_size) id = Vocabulary::kUnk;
  return lookup(embedding_, static_cast<std::size_t>(id));
}

SourceEncoding Model::encode_sequence(std::span<const int> ids) {
  SourceEncoding out;
  out.ids.assign(ids.begin(), ids.end());
  out.length = real_length(ids);
  out.mask.assign(ids.size(), false);
  std::fill(out.mask.begin(), out.mask.begin() + static_cast<std::ptrdiff_t>(out.length), true);
  if (out.length == 0) return out;
  const std::size_t d = cfg_->hidden, n = out.length;
  std::vector<Var> inputs, fwd(n), bwd(n);
  for (std::size_t i = 0; i < n; ++i) inputs.push_back(embed(ids[i]));
  Var h = g_->zeros(d);
  for (std::size_t i = 0; i < n; ++i) fwd[i] = h = gru_cell(enc_fwd_, inputs[i], h);
  h = g_->zeros(d);
  for (std::size_t i = n; i-- > 0;) bwd[i] = h = gru_cell(enc_bwd_, inputs[i], h);
  std::vector<Var> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(concat({fwd[i], bwd[i]}));
  out.last = rows.back();
  if (ids.size() > n) {
    Var zero = g_->zeros(2 * d);
    rows.resize(ids.size(), zero);
  }
  out.states = stack_rows(rows);
  return out;
}

SourceEncoding Model::encode_context(std::span<const int> ids) {
  SourceEncoding enc = encode_sequence(ids);
  if (enc.length == 0) throw std::invalid_argument("cannot encode an empty context");
  return enc;
}

std::vector<SourceEncoding> Model::encode_facts(const std::vector<std::vector<int>>& facts) {
  std::vector<SourceEncoding> out;
  for (const auto& f : facts) {
    SourceEncoding enc = encode_sequence(f);
    if (enc.length > 0) out.push_back(std::move(enc));
  }
  return out;
}

EncodedInputs Model::encode(const ModelInput& input) {
  EncodedInputs enc;
  enc.extended_size = std::max(input.extended_size, cfg_->vocab_size);
  enc.context = encode_context(input.context);
  enc.context_keys = project_keys(att_context_, enc.context.states);
  enc.facts = encode_facts(input.facts);
  for (const auto& f : enc.facts) enc.fact_keys.push_back(project_keys(att_fact_word_, f.states));
  auto drift_keys = [this](const std::vector<int>& ids, Var& keys, Var& proj) {
    if (ids.empty()) return;
    std::vector<Var> rows;
    for (int id : ids) rows.push_back(embed(id));
    keys = stack_rows(rows);
    proj = project_keys(att_drift_, keys);
  };
  enc.drift_c_ids = input.drift_contextual;
  enc.drift_f_ids = input.drift_factual;
  drift_keys(enc.drift_c_ids, enc.drift_c, enc.drift_c_keys);
  drift_keys(enc.drift_f_ids, enc.drift_f, enc.drift_f_keys);
  return enc;
}

Var Model::switch_probability(const EncodedInputs& enc) {
  Var pooled;
  if (enc.facts.empty()) {
    pooled = g_->zeros(2 * cfg_->hidden);
  } else {
    std::vector<Var> lasts;
    for (const auto& f : enc.facts) lasts.push_back(f.last);
    pooled = mean(lasts);
  }
  Var logit = add(matvec(switch_w_, concat({enc.context.last, pooled})), switch_b_);
  return sigmoid(logit);
}

DecoderState Model::initial_state(const EncodedInputs& enc) {
  DecoderState s;
  s.hidden = tanh(add(matvec(bridge_w_, enc.context.last), bridge_b_));
  if (cfg_->feed_attention) s.attention_feed = g_->zeros(2 * cfg_->hidden);
  return s;
}

CopyResult Model::context_copy(const EncodedInputs& enc, Var s) {
  auto att = additive_attention(att_context_, enc.context.states, enc.context_keys, s,
                                enc.context.mask);
  return {att.weights, att.context, scatter_add(att.weights, enc.context.ids, enc.extended_size)};
}

FactCopyResult Model::fact_copy(const EncodedInputs& enc, Var s) {
  FactCopyResult out;
  if (enc.facts.empty()) {
    out.context = g_->zeros(2 * cfg_->hidden);
    out.distribution = g_->zeros(enc.extended_size);
    return out;
  }
  std::vector<Var> summaries;
  for (std::size_t k = 0; k < enc.facts.size(); ++k) {
    const auto& f = enc.facts[k];
    auto att = additive_attention(att_fact_word_, f.states, enc.fact_keys[k], s, f.mask);
    out.word_weights.push_back(att.weights);
    out.per_fact.push_back(scatter_add(att.weights, f.ids, enc.extended_size));
    summaries.push_back(att.context);
  }
  Var keys = stack_rows(summaries);
  auto sent = additive_attention(att_fact_sentence_, keys, s);
  out.sentence_weights = sent.weights;
  out.context = sent.context;
  std::vector<Var> parts;
  for (std::size_t k = 0; k < out.per_fact.size(); ++k)
    parts.push_back(scale(out.per_fact[k], pick(sent.weights, k)));
  out.distribution = add_n(parts);
  return out;
}

CopyResult Model::drift_copy(Var keys, Var projected, std::span<const int> ids,
                             std::size_t ext_size, Var s) {
  if (!keys.valid() || ids.empty())
    return {Var{}, g_->zeros(cfg_->embed_dim), g_->zeros(ext_size)};
  auto att = additive_attention(att_drift_, keys, projected, s);
  return {att.weights, att.context, scatter_add(att.weights, ids, ext_size)};
}

StepVars Model::decode_step(int y_prev, const DecoderState& prev, const EncodedInputs& enc,
                            Var beta) {
  StepVars st;
  st.beta = beta;
  Var x = embed(y_prev);
  if (cfg_->feed_attention) x = concat({x, prev.attention_feed});
  Var s = gru_cell(dec_, x, prev.hidden);
  st.vocab = pad(softmax(add(matvec(vocab_w_, s), vocab_b_)), enc.extended_size);
  st.context = context_copy(enc, s);
  st.facts = fact_copy(enc, s);
  st.drift_c = drift_copy(enc.drift_c, enc.drift_c_keys, enc.drift_c_ids, enc.extended_size, s);
  st.drift_f = drift_copy(enc.drift_f, enc.drift_f_keys, enc.drift_f_ids, enc.extended_size, s);
  const bool degenerate = enc.facts.empty() || enc.drift_c_ids.empty() || enc.drift_f_ids.empty();
  st.mixture = mixture(st.vocab, st.context.distribution, st.facts.distribution,
                       st.drift_c.distribution, st.drift_f.distribution, s, st.context.context,
                       st.facts.context, st.drift_c.context, st.drift_f.context, beta, mix_w_,
                       degenerate);
  st.state.hidden = s;
  if (cfg_->feed_attention) st.state.attention_feed = st.context.context;
  return st;
}

MixtureResult mixture(Var p_vocab, Var p_context, Var p_fact, Var p_drift_c, Var p_drift_f, Var s,
                      Var s_context, Var s_fact, Var s_drift_c, Var s_drift_f, Var beta,
                      Var mix_w, bool renormalize) {
  MixtureResult m;
  m.lambda = softmax(matvec(mix_w, concat({s, s_context, s_fact, s_drift_c, s_drift_f})));
  Var lv = pick(m.lambda, 0), lc = pick(m.lambda, 1), lf = pick(m.lambda, 2);
  Var vocab_part = scale(p_vocab, lv);
  m.convergent = sum_of({vocab_part, scale(p_context, lc), scale(p_fact, lf)});
  m.divergent = sum_of({vocab_part, scale(p_drift_c, lc), scale(p_drift_f, lf)});
  m.final = add(scale(m.divergent, beta), scale(m.convergent, affine(beta, -1.0, 1.0)));
  if (renormalize) {
    m.final = divide(m.final, sum(m.final));
    m.renormalized = true;
  }
  return m;
}

Var switch_loss(Var beta, double smoothed_target) {
  return binary_cross_entropy(beta, smoothed_target);
}

Var copy_loss(std::span<const Var> lambda_cp, std::span<const int> labels) {
  if (lambda_cp.size() != labels.size() || lambda_cp.empty())
    throw std::invalid_argument("copy loss needs one label per step");
  std::vector<Var> terms;
  for (std::size_t t = 0; t < labels.size(); ++t)
    terms.push_back(binary_cross_entropy(lambda_cp[t], labels[t] ? 1.0 : 0.0));
  return affine(add_n(terms), 1.0 / static_cast<double>(terms.size()), 0.0);
}

LossVars Model::sequence_loss(const EncodedInputs& enc, const Targets& targets,
                              const LossOptions& opt) {
  const std::size_t T = targets.ids.size();
  if (T == 0 || targets.copy_labels.size() != T)
    throw std::invalid_argument("sequence loss needs a non-empty target with one copy label per token");
  LossVars out;
  out.beta = switch_probability(enc);
  Var mix_beta = opt.forced_beta ? g_->constant(Tensor::scalar(*opt.forced_beta)) : out.beta;
  DecoderState state = initial_state(enc);
  int y_prev = Vocabulary::kSos;
  std::vector<Var> log_probs, lambda_cp;
  for (std::size_t t = 0; t < T; ++t) {
    StepVars st = decode_step(y_prev, state, enc, mix_beta);
    const int y = targets.ids[t];
    if (y < 0 || static_cast<std::size_t>(y) >= enc.extended_size)
      throw std::out_of_range("target id " + std::to_string(y) + " outside the extended vocabulary");
    // Forced beta can zero the only route to an OOV target; floor keeps it finite.
    log_probs.push_back(log_floor(pick(st.mixture.final, static_cast<std::size_t>(y)), 1e-300));
    lambda_cp.push_back(add(pick(st.mixture.lambda, 1), pick(st.mixture.lambda, 2)));
    state = st.state;
    y_prev = y;
    out.steps.push_back(std::move(st));
  }
  out.nll = affine(add_n(log_probs), -1.0 / static_cast<double>(T), 0.0);
  out.switch_term = switch_loss(out.beta, smooth_label(targets.switch_label, opt.label_smoothing));
  out.copy_term = copy_loss(lambda_cp, targets.copy_labels);
  out.total = out.nll;
  if (opt.gamma_sw != 0.0) out.total = add(out.total, scale(out.switch_term, opt.gamma_sw));
  if (opt.gamma_cp != 0.0) out.total = add(out.total, scale(out.copy_term, opt.gamma_cp));
  return out;
}

LossBundle to_bundle(const LossVars& v) {
  return {v.nll.scalar(), v.switch_term.scalar(), v.copy_term.scalar(), v.total.scalar(),
          v.beta.scalar()};
}

StepDistribution snapshot(const StepVars& st) {
  StepDistribution d;
  d.beta = st.beta.scalar();
  const auto& lam = st.mixture.lambda.value();
  d.lambda = {lam[0], lam[1], lam[2]};
  d.p_vocab = to_vec(st.vocab);
  d.p_context = to_vec(st.context.distribution);
  d.p_fact = to_vec(st.facts.distribution);
  d.p_drift_c = to_vec(st.drift_c.distribution);
  d.p_drift_f = to_vec(st.drift_f.distribution);
  d.p_convergent = to_vec(st.mixture.convergent);
  d.p_divergent = to_vec(st.mixture.divergent);
  d.p_final = to_vec(st.mixture.final);
  d.alpha_context = to_vec(st.context.weights);
  d.alpha_fact = to_vec(st.facts.sentence_weights);
  d.alpha_drift_c = to_vec(st.drift_c.weights);
  d.alpha_drift_f = to_vec(st.drift_f.weights);
  for (Var w : st.facts.word_weights) d.alpha_fact_words.push_back(to_vec(w));
  for (Var p : st.facts.per_fact) d.p_fact_each.push_back(to_vec(p));
  d.renormalized = st.mixture.renormalized;
  return d;
}

}  // namespace condiv

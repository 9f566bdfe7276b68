#include "condiv/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace condiv {

namespace {

std::vector<int> top_k_ids(std::span<const double> p, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top-k sampling needs k >= 1");
  std::vector<int> ids;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) ids.push_back(static_cast<int>(i));
  if (ids.empty()) throw std::invalid_argument("cannot sample from a distribution with no positive mass");
  auto better = [&](int a, int b) { return p[a] != p[b] ? p[a] > p[b] : a < b; };
  const std::size_t n = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(), better);
  ids.resize(n);
  return ids;
}

}  // namespace

std::vector<double> top_k_distribution(std::span<const double> p, std::size_t k) {
  const auto ids = top_k_ids(p, k);
  double z = 0.0;
  for (int id : ids) z += p[id];
  std::vector<double> out(p.size(), 0.0);
  for (int id : ids) out[id] = p[id] / z;
  return out;
}

int top_k_sample(std::span<const double> p, std::size_t k, std::mt19937_64& rng) {
  const auto ids = top_k_ids(p, k);
  double z = 0.0;
  for (int id : ids) z += p[id];
  const double u = std::uniform_real_distribution<double>(0.0, z)(rng);
  double acc = 0.0;
  for (int id : ids) {
    acc += p[id];
    if (u < acc) return id;
  }
  return ids.back();
}

std::string_view source_name(Source s) {
  switch (s) {
    case Source::vocab: return "vocab";
    case Source::context: return "context";
    case Source::fact: return "fact";
    case Source::drift_contextual: return "drift-c";
    case Source::drift_factual: return "drift-f";
  }
  return "vocab";
}

std::string Provenance::tag() const {
  if (source == Source::fact) return "fact:" + std::to_string(fact);
  return std::string(source_name(source));
}

double ComponentMasses::total() const {
  return vocab + context + std::accumulate(fact.begin(), fact.end(), 0.0) + drift_contextual +
         drift_factual;
}

ComponentMasses component_masses(const StepDistribution& s, int token) {
  const auto at = [token](const std::vector<double>& v) {
    return static_cast<std::size_t>(token) < v.size() ? v[static_cast<std::size_t>(token)] : 0.0;
  };
  const double b = s.beta;
  const auto [lv, lc, lf] = s.lambda;
  ComponentMasses m;
  m.vocab = lv * at(s.p_vocab);
  m.context = (1.0 - b) * lc * at(s.p_context);
  for (std::size_t k = 0; k < s.p_fact_each.size(); ++k)
    m.fact.push_back((1.0 - b) * lf * s.alpha_fact[k] * at(s.p_fact_each[k]));
  m.drift_contextual = b * lc * at(s.p_drift_c);
  m.drift_factual = b * lf * at(s.p_drift_f);
  if (s.renormalized) {
    const double total = m.total();
    const double target = at(s.p_final);
    if (total > 0.0) {
      const double r = target / total;
      m.vocab *= r;
      m.context *= r;
      for (double& f : m.fact) f *= r;
      m.drift_contextual *= r;
      m.drift_factual *= r;
    }
  }
  return m;
}

Provenance provenance(const ComponentMasses& m) {
  Provenance best{Source::vocab, -1};
  double top = m.vocab;
  if (m.context > top) {
    top = m.context;
    best = {Source::context, -1};
  }
  for (std::size_t k = 0; k < m.fact.size(); ++k) {
    if (m.fact[k] > top) {
      top = m.fact[k];
      best = {Source::fact, static_cast<int>(k)};
    }
  }
  if (m.drift_contextual > top) {
    top = m.drift_contextual;
    best = {Source::drift_contextual, -1};
  }
  if (m.drift_factual > top) best = {Source::drift_factual, -1};
  return best;
}

void GenerationRequest::validate() const {
  if (context.empty()) throw std::invalid_argument("context: at least one utterance is required");
  if (beta && !(*beta >= 0.0 && *beta <= 1.0))
    throw std::out_of_range("beta: forced value must lie in [0, 1]");
  if (k == 0) throw std::invalid_argument("k: must be at least 1");
  if (max_length == 0) throw std::invalid_argument("max_length: must be at least 1");
}

DialogueExample make_request_example(const GenerationRequest& request, const IdfTable& idf) {
  std::vector<std::string> facts = request.facts;
  if (facts.size() > kMaxFacts) {
    std::vector<Tokens> ctx, pool;
    const std::size_t first = request.context.size() > kMaxContextUtterances
                                  ? request.context.size() - kMaxContextUtterances
                                  : 0;
    for (std::size_t i = first; i < request.context.size(); ++i) ctx.push_back(tokenize(request.context[i]));
    for (const auto& f : facts) pool.push_back(tokenize(f));
    std::vector<std::string> picked;
    for (std::size_t i : extract_facts(ctx, pool, idf)) picked.push_back(facts[i]);
    facts = std::move(picked);
  }
  return make_prompt(request.context, facts);
}

Generator::Generator(std::shared_ptr<const ModelParameters> params, Resources resources)
    : params_(std::move(params)), res_(std::move(resources)) {
  if (!params_) throw std::invalid_argument("generator needs parameters");
  if (params_->config.vocab_size != res_.vocab().size())
    throw ShapeError("checkpoint vocabulary size " + std::to_string(params_->config.vocab_size) +
                     " does not match vocabulary of " + std::to_string(res_.vocab().size()));
}

GenerationResult Generator::generate(const GenerationRequest& request) const {
  request.validate();
  return generate(make_request_example(request, res_.idf()), request.beta, request.k,
                  request.max_length, request.seed);
}

GenerationResult Generator::generate(const DialogueExample& prompt, std::optional<double> beta,
                                     std::size_t k, std::size_t max_length,
                                     std::uint64_t seed) const {
  if (beta && !(*beta >= 0.0 && *beta <= 1.0))
    throw std::out_of_range("beta: forced value must lie in [0, 1]");
  DialogueExample ex = prompt;
  ex.response.clear();
  PreparedExample prep = prepare_example(ex, res_);
  const Vocabulary& vocab = res_.vocab();

  GenerationResult out;
  out.seed = seed;
  out.drift = prep.drift;
  out.topics = prep.topics;
  out.example = ex;

  Graph g(GradMode::off);
  Model model(g, *params_);
  EncodedInputs enc = model.encode(prep.input);
  Var predicted = model.switch_probability(enc);
  out.beta_predicted = predicted.scalar();
  out.forced = beta.has_value();
  Var b = beta ? g.constant(Tensor::scalar(*beta)) : predicted;
  out.beta_used = b.scalar();

  std::mt19937_64 rng(seed);
  DecoderState state = model.initial_state(enc);
  int prev = Vocabulary::kSos;
  for (std::size_t t = 0; t < max_length; ++t) {
    StepVars sv = model.decode_step(prev, state, enc, b);
    const StepDistribution snap = snapshot(sv);
    const int id = top_k_sample(snap.p_final, k, rng);
    GeneratedStep step;
    step.id = id;
    step.token = prep.extended.token(id, vocab);
    step.probability = snap.p_final[static_cast<std::size_t>(id)];
    step.masses = component_masses(snap, id);
    step.provenance = provenance(step.masses);
    step.lambda = snap.lambda;
    step.fact_attention = snap.alpha_fact;
    step.renormalized = snap.renormalized;
    for (int alt : top_k_ids(snap.p_final, 5))
      step.alternatives.push_back({prep.extended.token(alt, vocab),
                                   snap.p_final[static_cast<std::size_t>(alt)],
                                   component_masses(snap, alt)});
    out.steps.push_back(std::move(step));
    if (id == Vocabulary::kEos) {
      out.ended = true;
      break;
    }
    out.tokens.push_back(out.steps.back().token);
    prev = id;
    state = sv.state;
  }
  out.text = detokenize(out.tokens);
  return out;
}

Tokens Generator::greedy(const DialogueExample& prompt, std::optional<double> beta) const {
  return generate(prompt, beta, 1, kDefaultMaxLength, 0).tokens;
}

// ---- chat -----------------------------------------------------------------------------

ChatSession::ChatSession(std::string id, std::vector<std::string> fact_pool, std::uint64_t seed_base)
    : id_(std::move(id)), facts_(std::move(fact_pool)), seed_base_(seed_base) {}

GenerationResult ChatSession::turn(const Generator& gen, const std::string& utterance,
                                   std::optional<double> beta, std::size_t k,
                                   std::optional<std::uint64_t> seed,
                                   std::optional<std::vector<std::string>> facts) {
  std::lock_guard lock(mu_);
  if (tokenize(utterance).empty()) throw std::invalid_argument("text: utterance is empty");
  if (facts) facts_ = std::move(*facts);
  GenerationRequest req;
  std::vector<std::string> history = history_;
  history.push_back(utterance);
  const std::size_t first = history.size() > kMaxContextUtterances ? history.size() - kMaxContextUtterances : 0;
  req.context.assign(history.begin() + static_cast<std::ptrdiff_t>(first), history.end());
  req.facts = facts_;
  req.beta = beta;
  req.k = k;
  req.seed = seed ? *seed : seed_base_ + turns_;
  GenerationResult r = gen.generate(req);

  history_.push_back(utterance);
  transcript_.push_back({"user", tokenize(utterance), utterance, std::nullopt, {}, 0});
  if (!r.tokens.empty()) history_.push_back(r.text);
  TranscriptEntry sys{"system", r.tokens, r.text, r.beta_used, {}, r.seed};
  for (std::size_t i = 0; i < r.tokens.size(); ++i) sys.provenance.push_back(r.steps[i].provenance.tag());
  transcript_.push_back(std::move(sys));
  ++turns_;
  return r;
}

void ChatSession::set_fact_pool(std::vector<std::string> facts) {
  std::lock_guard lock(mu_);
  facts_ = std::move(facts);
}

std::vector<std::string> ChatSession::fact_pool() const {
  std::lock_guard lock(mu_);
  return facts_;
}

std::vector<std::string> ChatSession::history() const {
  std::lock_guard lock(mu_);
  return history_;
}

std::vector<TranscriptEntry> ChatSession::transcript() const {
  std::lock_guard lock(mu_);
  return transcript_;
}

std::string ChatSession::export_jsonl() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& e : transcript_) {
    nlohmann::json j;
    j["speaker"] = e.speaker;
    j["tokens"] = e.tokens;
    j["beta"] = e.beta ? nlohmann::json(*e.beta) : nlohmann::json(nullptr);
    j["provenance"] = e.provenance;
    if (e.speaker == "system") j["seed"] = e.seed;
    out += j.dump() + '\n';
  }
  return out;
}

}  // namespace condiv

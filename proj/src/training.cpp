#include "condiv/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace condiv {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(out))
    throw std::invalid_argument("config '" + key + "': expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw std::invalid_argument("config '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config '" + key + "': expected a boolean, got '" + v + "'");
}

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double unhex(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("bad number in state file: " + s);
  return v;
}

nlohmann::json loss_json(const LossBundle& b) {
  return {{"nll", b.nll}, {"sw", b.switch_loss}, {"cp", b.copy_loss}, {"total", b.total}};
}

void add_into(LossBundle& acc, const LossBundle& b, double w) {
  acc.nll += w * b.nll;
  acc.switch_loss += w * b.switch_loss;
  acc.copy_loss += w * b.copy_loss;
  acc.total += w * b.total;
  acc.beta += w * b.beta;
}

}  // namespace

// ---- config --------------------------------------------------------------------------

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "learning_rate" || key == "lr") learning_rate = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_uint(key, value);
  else if (key == "max_epochs" || key == "epochs") max_epochs = parse_uint(key, value);
  else if (key == "gamma_sw") gamma_sw = parse_double(key, value);
  else if (key == "gamma_cp") gamma_cp = parse_double(key, value);
  else if (key == "n_div") n_div = parse_uint(key, value);
  else if (key == "hidden") hidden = parse_uint(key, value);
  else if (key == "embed_dim") embed_dim = parse_uint(key, value);
  else if (key == "attention") attention = parse_uint(key, value);
  else if (key == "vocab_cap") vocab_cap = parse_uint(key, value);
  else if (key == "topic_top_n") topic_top_n = parse_uint(key, value);
  else if (key == "seed") seed = parse_uint(key, value);
  else if (key == "label_smoothing") label_smoothing = parse_double(key, value);
  else if (key == "switch_polarity") polarity = parse_polarity(value);
  else if (key == "precision") precision = parse_precision(value);
  else if (key == "clip_norm") clip_norm = parse_double(key, value);
  else if (key == "feed_attention") feed_attention = parse_bool(key, value);
  else if (key == "train_data") train_data = value;
  else if (key == "dev_data") dev_data = value;
  else if (key == "embeddings") embeddings = value;
  else if (key == "out_dir") out_dir = value;
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(std::istream& is) {
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path.string());
  TrainConfig cfg = parse(is);
  const auto base = path.parent_path();
  for (std::string* p : {&cfg.train_data, &cfg.dev_data, &cfg.embeddings, &cfg.out_dir})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
  return cfg;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "learning_rate = " << learning_rate << '\n'
     << "batch_size = " << batch_size << '\n'
     << "max_epochs = " << max_epochs << '\n'
     << "gamma_sw = " << gamma_sw << '\n'
     << "gamma_cp = " << gamma_cp << '\n'
     << "n_div = " << n_div << '\n'
     << "hidden = " << hidden << '\n'
     << "embed_dim = " << embed_dim << '\n'
     << "attention = " << attention << '\n'
     << "vocab_cap = " << vocab_cap << '\n'
     << "topic_top_n = " << topic_top_n << '\n'
     << "seed = " << seed << '\n'
     << "label_smoothing = " << label_smoothing << '\n'
     << "switch_polarity = " << polarity_name(polarity) << '\n'
     << "precision = " << precision_name(precision) << '\n'
     << "clip_norm = " << clip_norm << '\n'
     << "feed_attention = " << (feed_attention ? "true" : "false") << '\n';
  if (!train_data.empty()) os << "train_data = " << train_data << '\n';
  if (!dev_data.empty()) os << "dev_data = " << dev_data << '\n';
  if (!embeddings.empty()) os << "embeddings = " << embeddings << '\n';
  if (!out_dir.empty()) os << "out_dir = " << out_dir << '\n';
  return os.str();
}

ModelConfig TrainConfig::model_config(std::size_t vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.embed_dim = embed_dim;
  m.hidden = hidden;
  m.attention = attention;
  m.n_div = n_div;
  m.gamma_sw = gamma_sw;
  m.gamma_cp = gamma_cp;
  m.feed_attention = feed_attention;
  return m;
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.gamma_sw = gamma_sw;
  o.gamma_cp = gamma_cp;
  o.label_smoothing = label_smoothing;
  return o;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (hidden == 0 || embed_dim == 0) throw std::invalid_argument("hidden and embed_dim must be positive");
  if (gamma_sw < 0 || gamma_cp < 0) throw std::invalid_argument("loss weights must be non-negative");
  if (!(label_smoothing > 0.5 && label_smoothing <= 1.0))
    throw std::invalid_argument("label_smoothing must lie in (0.5, 1]");
}

// ---- optimisation ----------------------------------------------------------------------

void Adam::step(std::span<Parameter* const> params, double lr) {
  if (m.empty()) {
    for (const Parameter* p : params) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
  }
  if (m.size() != params.size()) throw std::logic_error("adam state does not match parameter list");
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    auto mv = m[i].values();
    auto vv = v[i].values();
    auto w = p.value.values();
    auto g = p.grad.values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      mv[j] = beta1 * mv[j] + (1.0 - beta1) * g[j];
      vv[j] = beta2 * vv[j] + (1.0 - beta2) * g[j] * g[j];
      w[j] -= lr * (mv[j] / c1) / (std::sqrt(vv[j] / c2) + eps);
    }
  }
}

double grad_norm(std::span<const Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  std::vector<const Parameter*> view(params.begin(), params.end());
  const double norm = grad_norm(view);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.values()) g *= s;
  }
  return norm;
}

LossBundle evaluate_example(const ModelParameters& params, const PreparedExample& ex,
                            const LossOptions& opt) {
  Graph g(GradMode::off);
  Model model(g, params);
  auto enc = model.encode(ex.input);
  return to_bundle(model.sequence_loss(enc, ex.targets, opt));
}

LossBundle evaluate(const ModelParameters& params, std::span<const PreparedExample> data,
                    const LossOptions& opt) {
  LossBundle acc;
  if (data.empty()) return acc;
  const double w = 1.0 / static_cast<double>(data.size());
  for (const auto& ex : data) add_into(acc, evaluate_example(params, ex, opt), w);
  return acc;
}

LossBundle accumulate_example(ModelParameters& params, const PreparedExample& ex,
                              const LossOptions& opt, double weight) {
  Graph g;
  Model model(g, params);
  auto enc = model.encode(ex.input);
  LossVars lv = model.sequence_loss(enc, ex.targets, opt);
  g.backward(scale(lv.total, weight));
  return to_bundle(lv);
}

StepReport train_step(ModelParameters& params, Adam& adam,
                      std::span<const PreparedExample* const> batch, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  params.zero_grad();
  const LossOptions opt = cfg.loss_options();
  const double w = 1.0 / static_cast<double>(batch.size());
  StepReport rep;
  for (const PreparedExample* ex : batch) add_into(rep.loss, accumulate_example(params, *ex, opt, w), w);
  auto all = params.all();
  rep.grad_norm = clip_grad_norm(all, cfg.clip_norm);
  adam.step(all, cfg.learning_rate);
  if (cfg.precision == Precision::f32) round_to_f32(params);
  return rep;
}

double switcher_accuracy(const ModelParameters& params, std::span<const PreparedExample> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) {
    Graph g(GradMode::off);
    Model model(g, params);
    const double beta = model.switch_probability(model.encode(ex.input)).scalar();
    if ((beta > 0.5 ? 1 : 0) == ex.targets.switch_label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---- state -------------------------------------------------------------------------------

std::filesystem::path TrainState::params_path(const std::filesystem::path& state_path) {
  auto p = state_path;
  p += ".params";
  return p;
}

void TrainState::save(const std::filesystem::path& path, const ModelParameters& current,
                      const Tensor& topic_embeddings) const {
  save_checkpoint_atomic(params_path(path), current, topic_embeddings, Precision::f64);
  std::ostringstream os;
  os << "condiv-state v1\n"
     << "epoch " << epoch << '\n'
     << "step " << step << '\n'
     << "last_dev " << hex(last_dev) << '\n'
     << "best_dev " << hex(best_dev) << '\n'
     << "has_best " << (has_best ? 1 : 0) << '\n'
     << "adam_t " << adam.t << '\n'
     << "rng " << rng << '\n'
     << "moments " << adam.m.size() << '\n';
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    for (const Tensor* t : {&adam.m[i], &adam.v[i]}) {
      os << t->shape().rows << ' ' << t->shape().cols;
      for (double x : t->values()) os << ' ' << hex(x);
      os << '\n';
    }
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    f << os.str();
    f.flush();
    if (!f) throw std::runtime_error("failed writing training state: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState TrainState::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open training state: " + path.string());
  std::string line, key;
  if (!std::getline(is, line) || line != "condiv-state v1")
    throw FormatError("not a training state file: " + path.string());
  TrainState s;
  auto expect = [&](const std::string& want) {
    if (!(is >> key) || key != want) throw FormatError("training state: expected '" + want + "'");
  };
  std::string tok;
  expect("epoch");
  is >> s.epoch;
  expect("step");
  is >> s.step;
  expect("last_dev");
  is >> tok;
  s.last_dev = unhex(tok);
  expect("best_dev");
  is >> tok;
  s.best_dev = unhex(tok);
  expect("has_best");
  int hb = 0;
  is >> hb;
  s.has_best = hb != 0;
  expect("adam_t");
  is >> s.adam.t;
  expect("rng");
  is >> s.rng;
  expect("moments");
  std::size_t n = 0;
  is >> n;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto* dst : {&s.adam.m, &s.adam.v}) {
      std::size_t r = 0, c = 0;
      is >> r >> c;
      Tensor t({r, c});
      for (double& x : t.values()) {
        is >> tok;
        x = unhex(tok);
      }
      dst->push_back(std::move(t));
    }
  }
  if (!is) throw FormatError("training state truncated: " + path.string());
  return s;
}

// ---- loop ----------------------------------------------------------------------------------

void save_checkpoint_atomic(const std::filesystem::path& path, const ModelParameters& params,
                            const Tensor& topic_embeddings, Precision precision) {
  auto tmp = path;
  tmp += ".tmp";
  try {
    save_checkpoint(tmp, params, topic_embeddings, precision);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
  std::filesystem::rename(tmp, path);
}

ModelParameters initial_parameters(const TrainConfig& cfg, const Vocabulary& vocab,
                                   const Tensor& embeddings) {
  ModelParameters p(cfg.model_config(vocab.size()));
  p.init(cfg.seed);
  if (!(embeddings.shape() == p.embedding.value.shape()))
    throw ShapeError("embedding table " + embeddings.shape().str() + " does not match " +
                     p.embedding.value.shape().str());
  p.embedding.value = embeddings;
  if (cfg.precision == Precision::f32) round_to_f32(p);
  return p;
}

TrainResult train(const TrainConfig& cfg, ModelParameters params, TrainState state,
                  std::span<const PreparedExample> train_set, std::span<const PreparedExample> dev_set,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty() || dev_set.empty()) throw std::invalid_argument("training needs non-empty train and dev sets");
  if (state.epoch == 0 && state.step == 0) state.rng.seed(cfg.seed);
  TrainResult result;
  result.best = hooks.resume_best ? *hooks.resume_best : params;
  const LossOptions opt = cfg.loss_options();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = state.epoch; epoch < cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_id) {
      std::vector<const PreparedExample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(&train_set[order[i]]);
      StepReport rep = train_step(params, state.adam, batch, cfg);
      ++state.step;
      if (!std::isfinite(rep.loss.total))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + " batch " +
                            std::to_string(batch_id));
      add_into(rec.train, rep.loss, static_cast<double>(batch.size()) / static_cast<double>(order.size()));
      result.steps.push_back(rep.loss);
      if (hooks.log) {
        nlohmann::json j = loss_json(rep.loss);
        j["kind"] = "step";
        j["step"] = state.step;
        j["epoch"] = epoch + 1;
        j["batch"] = batch_id;
        j["grad_norm"] = rep.grad_norm;
        *hooks.log << j.dump() << '\n';
      }
    }
    rec.dev = evaluate(params, dev_set, opt);
    state.last_dev = rec.dev.total;
    state.epoch = epoch + 1;
    if (!state.has_best || rec.dev.total < state.best_dev) {
      state.best_dev = rec.dev.total;
      state.has_best = true;
      result.best = params;
      rec.selected = true;
      if (!hooks.checkpoint.empty() && hooks.topic_embeddings)
        save_checkpoint_atomic(hooks.checkpoint, params, *hooks.topic_embeddings, cfg.precision);
    }
    if (hooks.log) {
      nlohmann::json j;
      j["kind"] = "epoch";
      j["epoch"] = rec.epoch;
      j["step"] = state.step;
      j["train"] = loss_json(rec.train);
      j["dev"] = loss_json(rec.dev);
      j["selected"] = rec.selected;
      *hooks.log << j.dump() << '\n';
      hooks.log->flush();
    }
    if (!hooks.state.empty() && hooks.topic_embeddings) state.save(hooks.state, params, *hooks.topic_embeddings);
    result.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  result.best_dev = state.best_dev;
  result.state = std::move(state);
  return result;
}

}  // namespace condiv

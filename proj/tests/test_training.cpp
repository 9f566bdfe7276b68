#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fixture.hpp"

using namespace condiv;

namespace {

std::vector<std::string> S(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "condiv_test_training";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("config parsing") {
  std::stringstream ss(
      "# comment\n"
      "learning_rate = 0.01  # trailing\n"
      "batch_size=8\n"
      "\n"
      "switch_polarity = literal\n"
      "precision = f64\n"
      "feed_attention = yes\n"
      "train_data = data/train.jsonl\n");
  TrainConfig c = TrainConfig::parse(ss);
  CHECK(c.learning_rate == 0.01);
  CHECK(c.batch_size == 8);
  CHECK(c.polarity == SwitchPolarity::literal);
  CHECK(c.precision == Precision::f64);
  CHECK(c.feed_attention);
  CHECK(c.hidden == 128);

  std::stringstream again(c.to_text());
  TrainConfig d = TrainConfig::parse(again);
  CHECK(d.to_text() == c.to_text());

  c.set("lr", "0.5");
  CHECK(c.learning_rate == 0.5);
  c.set("epochs", "3");
  CHECK(c.max_epochs == 3);
  CHECK_THROWS_AS(c.set("nope", "1"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("batch_size", "-1"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("batch_size", "4x"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("learning_rate", "nan"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("switch_polarity", "sideways"), std::invalid_argument);
  std::stringstream noeq("hidden 3\n");
  CHECK_THROWS_AS(TrainConfig::parse(noeq), std::invalid_argument);

  auto path = scratch("cfg.txt");
  {
    std::ofstream out(path);
    out << "train_data = t.jsonl\nout_dir = /abs/out\n";
  }
  TrainConfig l = TrainConfig::load(path);
  CHECK(l.train_data == (path.parent_path() / "t.jsonl").string());
  CHECK(l.out_dir == "/abs/out");

  TrainConfig bad;
  bad.label_smoothing = 0.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("adam matches a hand-rolled update") {
  Parameter p("w", {1, 3});
  p.value.values()[0] = 1.0;
  p.value.values()[1] = -2.0;
  p.value.values()[2] = 0.5;
  std::vector<Parameter*> ps{&p};
  Adam adam;
  const std::vector<std::vector<double>> grads{{0.5, -1.0, 0.0}, {0.25, 2.0, -3.0}, {1.0, 1.0, 1.0}};
  std::vector<double> w{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    for (std::size_t j = 0; j < 3; ++j) p.grad.values()[j] = grads[t - 1][j];
    adam.step(ps, 0.1);
    for (std::size_t j = 0; j < 3; ++j) {
      const double g = grads[t - 1][j];
      m[j] = 0.9 * m[j] + 0.1 * g;
      v[j] = 0.999 * v[j] + 0.001 * g * g;
      const double mh = m[j] / (1.0 - std::pow(0.9, t));
      const double vh = v[j] / (1.0 - std::pow(0.999, t));
      w[j] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(p.value.values()[j] - w[j]) < 1e-14);
  }
  CHECK(adam.t == 3);
  Parameter other("x", {2, 2});
  std::vector<Parameter*> wrong{&p, &other};
  CHECK_THROWS_AS(adam.step(wrong, 0.1), std::logic_error);
}

TEST_CASE("gradient clipping never increases the norm") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Parameter a("a", {2, 3}), b("b", {4, 1});
    for (double& g : a.grad.values()) g = n(rng);
    for (double& g : b.grad.values()) g = n(rng);
    std::vector<Parameter*> ps{&a, &b};
    std::vector<const Parameter*> cps{&a, &b};
    const auto before_a = a.grad.vec();
    const double max_norm = trial % 2 ? 1.0 : 50.0;
    const double before = clip_grad_norm(ps, max_norm);
    const double after = grad_norm(cps);
    CHECK(after <= before + 1e-12);
    CHECK(after <= max_norm + 1e-9);
    if (before <= max_norm) {
      CHECK(a.grad.vec() == before_a);
    } else {
      CHECK(after == doctest::Approx(max_norm));
      // direction kept
      for (std::size_t i = 0; i < before_a.size(); ++i)
        CHECK(a.grad.values()[i] * before == doctest::Approx(before_a[i] * after));
    }
  }
  Parameter z("z", {1, 2});
  std::vector<Parameter*> zs{&z};
  CHECK(clip_grad_norm(zs, 1.0) == 0.0);
}

TEST_CASE("switch labels") {
  auto topics = S({"ramen", "the", "tokyo"});
  CHECK(switch_label(S({"how", "about", "ramen", "?"}), topics) == 0);
  CHECK(switch_label(S({"how", "about", "ramen", "?"}), topics, SwitchPolarity::literal) == 1);
  CHECK(switch_label(S({"how", "about", "kyoto", "?"}), topics) == 1);
  // stopwords never count as overlap
  CHECK(switch_label(S({"the", "end"}), topics) == 1);
  CHECK(switch_label(S({"ramen"}), {}) == 1);
  CHECK(switch_label(S({"ramen"}), {}, SwitchPolarity::literal) == 0);
  CHECK(parse_polarity("motivated") == SwitchPolarity::motivated);
  CHECK(polarity_name(SwitchPolarity::literal) == "literal");
}

TEST_CASE("copy labels cover every source") {
  auto ex = make_example(S({"hi tokyo", "ok"}), S({"ramen is good"}), "unused");
  DriftWords dw;
  dw.contextual = S({"kyoto"});
  dw.factual = S({"sushi"});
  auto targets = S({"tokyo", "ramen", "kyoto", "sushi", "paris", "<sep>", "<eos>"});
  auto got = copy_labels(targets, ex, dw);
  // independent scan
  std::vector<int> want;
  for (const auto& t : targets) {
    bool hit = false;
    for (const auto& u : ex.context_utterances)
      for (const auto& w : u) hit |= w == t;
    for (const auto& f : ex.facts)
      for (const auto& w : f) hit |= w == t;
    for (const auto& w : dw.contextual) hit |= w == t;
    for (const auto& w : dw.factual) hit |= w == t;
    want.push_back(hit ? 1 : 0);
  }
  CHECK(got == want);
  CHECK(got == std::vector<int>{1, 1, 1, 1, 0, 0, 0});
}

TEST_CASE("prepared examples") {
  auto s = fixture::small();
  const auto& p = s.ptrain.front();
  CHECK(p.targets.ids.back() == Vocabulary::kEos);
  CHECK(p.targets.ids.size() == p.example.response.size() + 1);
  CHECK(p.targets.copy_labels.size() == p.targets.ids.size());
  CHECK(p.input.drift_contextual.size() == p.drift.contextual.size());
  for (std::size_t i = 0; i < s.ptrain.size(); ++i)
    CHECK(s.ptrain[i].targets.switch_label == s.corpus.train_kind[i]);
}

TEST_CASE("zero weights remove loss terms") {
  auto s = fixture::small();
  auto params = initial_parameters(s.cfg, s.vocab, s.emb.matrix);
  const auto& ex = s.ptrain[1];
  LossOptions full;
  LossOptions none;
  none.gamma_sw = 0.0;
  none.gamma_cp = 0.0;
  LossBundle a = evaluate_example(params, ex, full);
  LossBundle b = evaluate_example(params, ex, none);
  CHECK(b.total == b.nll);
  CHECK(a.nll == b.nll);
  CHECK(std::abs(a.total - (a.nll + a.switch_loss + a.copy_loss)) < 1e-12);

  // the copy term never reaches the switcher, the switch term does
  auto switch_grad = [&](double gsw, double gcp) {
    ModelParameters g = params;
    g.zero_grad();
    LossOptions o;
    o.gamma_sw = gsw;
    o.gamma_cp = gcp;
    accumulate_example(g, ex, o, 1.0);
    return g.switch_w.grad.vec();
  };
  CHECK(switch_grad(0.0, 1.0) == switch_grad(0.0, 0.0));
  CHECK(switch_grad(1.0, 0.0) != switch_grad(0.0, 0.0));
}

TEST_CASE("training is deterministic and selects on dev") {
  auto s = fixture::small();
  auto p0 = initial_parameters(s.cfg, s.vocab, s.emb.matrix);
  std::stringstream log1, log2;
  TrainHooks h1, h2;
  h1.log = &log1;
  h2.log = &log2;
  auto r1 = train(s.cfg, p0, TrainState{}, s.ptrain, s.pdev, h1);
  auto r2 = train(s.cfg, p0, TrainState{}, s.ptrain, s.pdev, h2);
  CHECK(fixture::same_values(r1.best, r2.best));
  CHECK(log1.str() == log2.str());
  REQUIRE(r1.epochs.size() == 2);
  CHECK(r1.epochs[0].selected);
  CHECK(r1.state.step == 2 * ((s.ptrain.size() + 4) / 5));
  double best = r1.epochs[0].dev.total;
  for (const auto& e : r1.epochs) best = std::min(best, e.dev.total);
  CHECK(r1.best_dev == best);
  CHECK(evaluate(r1.best, s.pdev, s.cfg.loss_options()).total == doctest::Approx(best).epsilon(1e-12));
  CHECK(log1.str().find("\"kind\":\"epoch\"") != std::string::npos);

  TrainConfig other = s.cfg;
  other.seed = 2;
  auto r3 = train(other, initial_parameters(other, s.vocab, s.emb.matrix), TrainState{}, s.ptrain, s.pdev);
  CHECK_FALSE(fixture::same_values(r1.best, r3.best));

  CHECK_THROWS_AS(train(s.cfg, p0, TrainState{}, {}, s.pdev), std::invalid_argument);
}

TEST_CASE("f32 training keeps values representable") {
  auto s = fixture::small(10);
  s.cfg.precision = Precision::f32;
  s.cfg.max_epochs = 1;
  auto r = train(s.cfg, initial_parameters(s.cfg, s.vocab, s.emb.matrix), TrainState{}, s.ptrain, s.pdev);
  for (const Parameter* p : r.best.all())
    for (double v : p->value.values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("resume reproduces an uninterrupted run") {
  auto s = fixture::small();
  auto p0 = initial_parameters(s.cfg, s.vocab, s.emb.matrix);
  auto full = train(s.cfg, p0, TrainState{}, s.ptrain, s.pdev);

  TrainConfig first = s.cfg;
  first.max_epochs = 1;
  auto state_path = scratch("train.state");
  TrainHooks h;
  h.state = state_path;
  h.topic_embeddings = &s.emb.matrix;
  auto half = train(first, p0, TrainState{}, s.ptrain, s.pdev, h);

  TrainState st = TrainState::load(state_path);
  CHECK(st.epoch == 1);
  CHECK(st.step == half.state.step);
  CHECK(st.adam.t == half.state.adam.t);
  CHECK(st.best_dev == half.state.best_dev);
  CHECK(st.rng == half.state.rng);
  REQUIRE(st.adam.m.size() == half.state.adam.m.size());
  for (std::size_t i = 0; i < st.adam.m.size(); ++i) {
    CHECK(st.adam.m[i].vec() == half.state.adam.m[i].vec());
    CHECK(st.adam.v[i].vec() == half.state.adam.v[i].vec());
  }
  Checkpoint ck = load_checkpoint(TrainState::params_path(state_path));
  TrainHooks h2;
  h2.resume_best = &half.best;
  auto rest = train(s.cfg, ck.params, st, s.ptrain, s.pdev, h2);
  CHECK(rest.epochs.size() == 1);
  CHECK(fixture::same_values(rest.best, full.best));
  CHECK(rest.best_dev == full.best_dev);

  std::ofstream(scratch("junk.state")) << "something else\n";
  CHECK_THROWS_AS(TrainState::load(scratch("junk.state")), FormatError);
}

TEST_CASE("non-finite loss names the batch") {
  auto s = fixture::small();
  auto p0 = initial_parameters(s.cfg, s.vocab, s.emb.matrix);
  p0.vocab_b.value.values()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(s.cfg, p0, TrainState{}, s.ptrain, s.pdev);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch 1 batch 0") != std::string::npos);
  }
}

TEST_CASE("switcher accuracy") {
  auto s = fixture::small();
  auto params = initial_parameters(s.cfg, s.vocab, s.emb.matrix);
  params.switch_w.value.fill(0.0);
  const double eps = 1e-3;
  params.switch_b.value.values()[0] = std::log((0.5 - eps) / (0.5 + eps));
  auto zeros = s.pdev;
  for (auto& p : zeros) p.targets.switch_label = 0;
  CHECK(switcher_accuracy(params, zeros) == 1.0);
  auto ones = zeros;
  for (auto& p : ones) p.targets.switch_label = 1;
  CHECK(switcher_accuracy(params, ones) == 0.0);
  CHECK(switcher_accuracy(params, {}) == 0.0);
}

TEST_CASE("atomic checkpoint save keeps the old file on failure") {
  auto s = fixture::small();
  auto params = initial_parameters(s.cfg, s.vocab, s.emb.matrix);
  auto path = scratch("model.ckpt");
  save_checkpoint_atomic(path, params, s.emb.matrix, Precision::f64);
  const auto size = std::filesystem::file_size(path);
  CHECK_THROWS(save_checkpoint_atomic(scratch("nodir") / "x" / "model.ckpt", params, s.emb.matrix,
                                      Precision::f64));
  CHECK(std::filesystem::file_size(path) == size);
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
}

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "reference.hpp"
#include "toy.hpp"
#include "walkthrough.hpp"

using namespace condiv;
using walk::max_diff;
using walk::values;
using walk::walkthrough_diff;


TEST_CASE("forward pass matches the straight-line walkthrough") {
  const auto p = toy::params(11);
  LossOptions opt;
  opt.gamma_sw = 0.7;
  opt.gamma_cp = 1.3;
  CHECK(walkthrough_diff(p, toy::input(), toy::targets(), opt) < 1e-9);

  SUBCASE("forced beta") {
    opt.forced_beta = 0.4;
    CHECK(walkthrough_diff(p, toy::input(), toy::targets(), opt) < 1e-9);
  }
  SUBCASE("single fact") {
    auto in = toy::input();
    in.facts.pop_back();
    CHECK(walkthrough_diff(p, in, toy::targets(), opt) < 1e-9);
  }
  SUBCASE("no facts renormalizes") {
    auto in = toy::input();
    in.facts.clear();
    CHECK(walkthrough_diff(p, in, toy::targets(), opt) < 1e-9);
  }
  SUBCASE("empty drift list renormalizes") {
    auto in = toy::input();
    in.drift_factual.clear();
    CHECK(walkthrough_diff(p, in, toy::targets(), opt) < 1e-9);
  }
  SUBCASE("padded sources") {
    auto in = toy::input();
    in.context.push_back(Vocabulary::kPad);
    in.facts[1].push_back(Vocabulary::kPad);
    CHECK(walkthrough_diff(p, in, toy::targets(), opt) < 1e-9);
  }
}

TEST_CASE("several parameter draws agree with the walkthrough") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    CHECK(walkthrough_diff(toy::params(seed, 1.0), toy::input(), toy::targets(), {}) < 1e-9);
}

TEST_CASE("length-one context runs one step each way") {
  const auto p = toy::params(3);
  Graph g(GradMode::off);
  Model m(g, p);
  auto enc = m.encode_sequence(std::vector<int>{7});
  auto r = ref::encode(p, {7});
  CHECK(enc.length == 1);
  CHECK(max_diff(enc.last.value().vec(), r.last) < 1e-15);
  CHECK_THROWS(m.encode_context(std::vector<int>{}));
}

TEST_CASE("padding rows are zero and masked") {
  const auto p = toy::params(5);
  Graph g(GradMode::off);
  Model m(g, p);
  auto enc = m.encode_sequence(std::vector<int>{5, 6, Vocabulary::kPad});
  CHECK(enc.length == 2);
  CHECK(enc.mask == std::vector<bool>{true, true, false});
  for (std::size_t j = 0; j < 2 * p.config.hidden; ++j) CHECK(enc.states.value().at(2, j) == 0.0);
}

TEST_CASE("context and fact encoders share weights") {
  const auto p = toy::params(8);
  Graph g(GradMode::off);
  Model m(g, p);
  auto c = m.encode_sequence(std::vector<int>{5, 6});
  auto f = m.encode_facts({{5, 6}});
  REQUIRE(f.size() == 1);
  CHECK(c.states.value().vec() == f[0].states.value().vec());

  ModelParameters q(toy::config());
  std::set<std::string> enc, dec;
  for (auto* x : q.encoder_fwd.parameters()) enc.insert(x->name);
  for (auto* x : q.decoder.parameters()) dec.insert(x->name);
  for (const auto& n : dec) CHECK_FALSE(enc.contains(n));
}

TEST_CASE("switch probability") {
  auto p = toy::params(2);
  p.switch_w.value.fill(0.0);
  p.switch_b.value.fill(0.0);
  Graph g(GradMode::off);
  Model m(g, p);
  auto enc = m.encode(toy::input());
  CHECK(m.switch_probability(enc).scalar() == doctest::Approx(0.5).epsilon(1e-15));

  SUBCASE("no facts pools zeros") {
    auto p2 = toy::params(2);
    Graph g2(GradMode::off);
    Model m2(g2, p2);
    auto in = toy::input();
    in.facts.clear();
    auto e2 = m2.encode(in);
    auto r = ref::encode(p2, in.context);
    double logit = p2.switch_b.value[0];
    for (std::size_t i = 0; i < r.last.size(); ++i) logit += p2.switch_w.value[i] * r.last[i];
    CHECK(m2.switch_probability(e2).scalar() == doctest::Approx(ref::sigm(logit)).epsilon(1e-14));
  }
}

TEST_CASE("mixture") {
  Graph g(GradMode::off);
  auto vec = [&](std::vector<double> v) { return g.constant(Tensor::vector(std::move(v))); };
  Var pv = vec({0.5, 0.25, 0.25, 0.0}), pc = vec({0.0, 1.0, 0.0, 0.0}), pf = vec({0.0, 0.0, 0.5, 0.5});
  Var pdc = vec({0.0, 0.0, 0.0, 1.0}), pdf = vec({0.25, 0.25, 0.25, 0.25});
  Var s = vec({0.3, -0.2}), sc = vec({0.1, 0.4, -0.5, 0.2}), sf = vec({0.0, 0.3, 0.1, -0.1});
  Var sdc = vec({0.2}), sdf = vec({-0.7});

  SUBCASE("zero weights give uniform lambda") {
    Var w = g.constant(Tensor({3, 12}));
    auto mix = mixture(pv, pc, pf, pdc, pdf, s, sc, sf, sdc, sdf, g.constant(Tensor::scalar(0.3)), w, false);
    for (std::size_t i = 0; i < 3; ++i) CHECK(mix.lambda.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }

  Tensor wt({3, 12});
  for (std::size_t i = 0; i < wt.size(); ++i) wt[i] = std::sin(0.7 * static_cast<double>(i) + 0.1);
  Var w = g.constant(wt);

  SUBCASE("endpoints reproduce each branch exactly") {
    auto m0 = mixture(pv, pc, pf, pdc, pdf, s, sc, sf, sdc, sdf, g.constant(Tensor::scalar(0.0)), w, false);
    auto m1 = mixture(pv, pc, pf, pdc, pdf, s, sc, sf, sdc, sdf, g.constant(Tensor::scalar(1.0)), w, false);
    CHECK(m0.final.value().vec() == m0.convergent.value().vec());
    CHECK(m1.final.value().vec() == m1.divergent.value().vec());
  }

  SUBCASE("closed-form blend at 0.4") {
    auto m = mixture(pv, pc, pf, pdc, pdf, s, sc, sf, sdc, sdf, g.constant(Tensor::scalar(0.4)), w, false);
    ref::Vec in = ref::join({s.value().vec(), sc.value().vec(), sf.value().vec(), sdc.value().vec(), sdf.value().vec()});
    ref::Vec lam = ref::softmax(ref::mv(wt, in));
    double total = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double con = lam[0] * pv.value()[i] + lam[1] * pc.value()[i] + lam[2] * pf.value()[i];
      const double div = lam[0] * pv.value()[i] + lam[1] * pdc.value()[i] + lam[2] * pdf.value()[i];
      CHECK(std::abs(m.final.value()[i] - (0.4 * div + 0.6 * con)) < 1e-12);
      total += m.final.value()[i];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("copy distributions") {
  const auto p = toy::params(4);
  Graph g(GradMode::off);
  Model m(g, p);
  auto in = toy::input();
  in.context = {5, 6, 5};
  in.facts = {{7, 7, 8}};
  in.drift_contextual = {9};
  auto enc = m.encode(in);
  auto st = m.decode_step(Vocabulary::kSos, m.initial_state(enc), enc, g.constant(Tensor::scalar(0.5)));
  const auto d = snapshot(st);

  const auto& a = d.alpha_context;
  CHECK(d.p_context[5] == doctest::Approx(a[0] + a[2]).epsilon(1e-15));
  CHECK(d.p_context[6] == doctest::Approx(a[1]).epsilon(1e-15));

  REQUIRE(d.alpha_fact.size() == 1);
  CHECK(d.alpha_fact[0] == 1.0);
  CHECK(d.p_fact == d.p_fact_each[0]);

  REQUIRE(d.alpha_drift_c.size() == 1);
  CHECK(d.alpha_drift_c[0] == 1.0);
  CHECK(d.p_drift_c[9] == 1.0);
  CHECK(st.drift_c.context.value().vec() == ref::embed(p, 9));
}

TEST_CASE("identical keys give uniform attention") {
  const auto p = toy::params(6);
  Graph g(GradMode::off);
  auto att = bind_attention(g, p.att_context);
  Tensor keys({3, 8});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) keys.at(r, c) = 0.1 * static_cast<double>(c) - 0.3;
  auto res = additive_attention(att, g.constant(keys), g.constant(Tensor::vector({0.2, -0.1, 0.4, 0.0})));
  for (std::size_t i = 0; i < 3; ++i) CHECK(res.weights.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  for (std::size_t c = 0; c < 8; ++c) CHECK(res.context.value()[c] == doctest::Approx(keys.at(0, c)).epsilon(1e-14));
}

TEST_CASE("switch loss") {
  Graph g(GradMode::off);
  auto b = [&](double v) { return g.constant(Tensor::scalar(v)); };
  CHECK(switch_loss(b(0.9), 0.9).scalar() ==
        doctest::Approx(-(0.9 * std::log(0.9) + 0.1 * std::log(0.1))).epsilon(1e-14));
  CHECK(switch_loss(b(0.9), 0.9).scalar() == doctest::Approx(0.3251).epsilon(1e-4));
  for (double t : {0.1, 0.5, 0.9}) CHECK(switch_loss(b(0.5), t).scalar() == doctest::Approx(std::log(2.0)));
  CHECK(smooth_label(1, 0.9) == 0.9);
  CHECK(smooth_label(0, 0.9) == doctest::Approx(0.1));
}

TEST_CASE("copy loss") {
  Graph g(GradMode::off);
  auto c = [&](double v) { return g.constant(Tensor::scalar(v)); };
  std::vector<Var> ones{c(1.0), c(1.0)};
  CHECK(copy_loss(ones, std::vector<int>{1, 1}).scalar() < 1e-6);
  std::vector<Var> two_thirds{c(2.0 / 3.0)};
  CHECK(copy_loss(two_thirds, std::vector<int>{1}).scalar() == doctest::Approx(-std::log(2.0 / 3.0)));
  CHECK(copy_loss(two_thirds, std::vector<int>{1}).scalar() == doctest::Approx(0.405).epsilon(1e-3));
  std::vector<Var> halves{c(0.5), c(0.5)};
  CHECK(copy_loss(halves, std::vector<int>{1, 0}).scalar() == doctest::Approx(std::log(2.0)));
  CHECK_THROWS(copy_loss(halves, std::vector<int>{1}));
}

TEST_CASE("loss weights drop terms") {
  const auto p = toy::params(9);
  auto run = [&](double gsw, double gcp) {
    Graph g(GradMode::off);
    LossOptions opt;
    opt.gamma_sw = gsw;
    opt.gamma_cp = gcp;
    return to_bundle(toy::forward(g, p, toy::input(), toy::targets(), opt));
  };
  const auto full = run(1.0, 1.0), no_sw = run(0.0, 1.0), no_cp = run(1.0, 0.0), none = run(0.0, 0.0);
  CHECK(none.total == none.nll);
  CHECK(std::abs(full.total - (full.nll + full.switch_loss + full.copy_loss)) < 1e-12);
  CHECK(std::abs(no_sw.total - (no_sw.nll + no_sw.copy_loss)) < 1e-12);
  CHECK(std::abs(no_cp.total - (no_cp.nll + no_cp.switch_loss)) < 1e-12);
  for (const auto& b : {no_sw, no_cp, none}) {
    CHECK(b.nll == full.nll);
    CHECK(b.switch_loss == full.switch_loss);
    CHECK(b.copy_loss == full.copy_loss);
  }
}

TEST_CASE("extended previous token embeds as UNK") {
  const auto p = toy::params(10);
  Graph g(GradMode::off);
  Model m(g, p);
  CHECK(m.embed(10).value().vec() == ref::embed(p, Vocabulary::kUnk));
  CHECK(m.embed(-3).value().vec() == ref::embed(p, Vocabulary::kUnk));
}

TEST_CASE("out-of-range target is rejected") {
  const auto p = toy::params(1);
  Graph g(GradMode::off);
  auto t = toy::targets();
  t.ids[0] = 40;
  CHECK_THROWS_AS(toy::forward(g, p, toy::input(), t), std::out_of_range);
}

TEST_CASE("full loss gradient matches finite differences") {
  auto p = toy::params(12);
  auto params = p.all();
  const auto in = toy::input();
  const auto tg = toy::targets();
  LossBuilder f = [&](Graph& g) { return toy::forward_mut(g, p, in, tg).total; };
  GradReport rep = grad_check(f, params);
  for (const auto& e : rep.entries) {
    INFO(e.name << " rel " << e.max_rel_error << " abs " << e.max_abs_error);
    CHECK(e.pass);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "condiv_test_model";
  std::filesystem::create_directories(dir);
  const auto p = toy::params(13);
  Tensor topic({10, 3}, 0.25);
  const auto forward_values = [](const ModelParameters& q) {
    Graph g(GradMode::off);
    auto lv = toy::forward(g, q, toy::input(), toy::targets());
    std::vector<double> out{lv.total.scalar()};
    for (const auto& st : lv.steps) {
      auto v = st.mixture.final.value().vec();
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  };

  SUBCASE("f64 is bit exact") {
    save_checkpoint(dir / "a.ckpt", p, topic, Precision::f64);
    auto c = load_checkpoint(dir / "a.ckpt");
    CHECK(c.precision == Precision::f64);
    CHECK(c.topic_embeddings.vec() == topic.vec());
    CHECK(forward_values(c.params) == forward_values(p));
    for (std::size_t i = 0; i < p.all().size(); ++i) CHECK(c.params.all()[i]->value.vec() == p.all()[i]->value.vec());
  }
  SUBCASE("f32 stores rounded values") {
    save_checkpoint(dir / "b.ckpt", p, topic, Precision::f32);
    auto c = load_checkpoint(dir / "b.ckpt");
    auto r = p;
    round_to_f32(r);
    CHECK(forward_values(c.params) == forward_values(r));
  }
  SUBCASE("corrupt file is rejected") {
    {
      std::ofstream os(dir / "bad.ckpt");
      os << "not a checkpoint\n";
    }
    CHECK_THROWS(load_checkpoint(dir / "bad.ckpt"));
  }
  std::filesystem::remove_all(dir);
}

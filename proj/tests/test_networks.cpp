#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <vector>

#include "fd_check.hpp"
#include "metapinn/errors.hpp"
#include "metapinn/graph.hpp"
#include "metapinn/networks.hpp"
#include "metapinn/parameters.hpp"

using namespace metapinn;
using metapinn::testing::check_gradients;
using metapinn::testing::ramp;
using Catch::Approx;

namespace {

ModelConfig tiny_config(int k_pde = 1) {
  ModelConfig cfg;
  cfg.hsm.time_steps = 4;
  cfg.hsm.input_features = 3;
  cfg.hsm.embed_dim = 4;
  cfg.hsm.key_dim = 2;
  cfg.hsm.num_blocks = 1;
  cfg.hsm.hidden_dim = 2;
  cfg.hsm.dropout_rate = 0.1;
  cfg.rul.hidden = {5, 4, 3};
  cfg.rul.terms = 2;
  cfg.pgr.hidden = {4, 3};
  cfg.pgr.k_pde = k_pde;
  return cfg;
}

Tensor window_for(const HsmConfig& cfg, double phase = 0.0) {
  return ramp({cfg.time_steps, cfg.input_features}, -1.0, 1.0, phase);
}

}  // namespace

TEST_CASE("config validation rejects bad dimensions") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());

  ModelConfig bad = cfg;
  bad.hsm.hidden_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.hsm.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.rul.hidden = {8, 8};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.pgr.k_pde = 3;
  CHECK_THROWS_AS(bad.validate(), CapabilityError);

  bad = cfg;
  bad.pgr.k_pde = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("parameter set construction") {
  ModelConfig cfg = tiny_config();
  Rng rng(42);
  ParameterSet p = make_parameters(cfg, rng);

  SECTION("canonical names and shapes") {
    CHECK(p.at("hsm.block0.We").shape == (Shape{3, 4}));
    CHECK(p.at("hsm.block0.Wq").shape == (Shape{2, 4}));
    CHECK(p.at("hsm.block0.Wv").shape == (Shape{4, 4}));
    CHECK(p.at("hsm.pool.Wp").shape == (Shape{2, 4}));
    CHECK(p.at("rul.layer0.W").shape == (Shape{5, 3}));
    CHECK(p.at("rul.layer3.W").shape == (Shape{2, 3}));
    CHECK(p.at("rul.rho").shape == (Shape{2}));
    CHECK(p.at("pgr.layer0.W").shape == (Shape{4, 3}));
    CHECK(p.at("pgr.out.W").shape == (Shape{1, 3}));
    CHECK_FALSE(p.has("hsm.block1.We"));
  }

  SECTION("biases zero, weighting vector ones") {
    for (double v : p.at("rul.layer0.b").data) CHECK(v == 0.0);
    for (double v : p.at("hsm.block0.be").data) CHECK(v == 0.0);
    for (double v : p.at("rul.rho").data) CHECK(v == 1.0);
  }

  SECTION("same seed reproduces, different seed differs") {
    ParameterSet q = make_parameters(cfg, Rng(42));
    CHECK(max_abs_diff(p, q) == 0.0);
    ParameterSet r = make_parameters(cfg, Rng(43));
    CHECK(max_abs_diff(p, r) > 0.0);
  }

  SECTION("weights respect the fan-in bound") {
    const double limit = 1.0 / std::sqrt(3.0);
    for (double v : p.at("hsm.block0.We").data) {
      CHECK(v <= limit);
      CHECK(v >= -limit);
    }
  }

  SECTION("two-block model names both blocks") {
    ModelConfig two = cfg;
    two.hsm.num_blocks = 2;
    ParameterSet q = make_parameters(two, Rng(1));
    CHECK(q.at("hsm.block1.We").shape == (Shape{4, 4}));
  }
}

TEST_CASE("hidden state mapper forward") {
  ModelConfig cfg = tiny_config();
  Rng rng(7);
  ParameterSet params = make_parameters(cfg, rng);

  SECTION("output has the configured hidden dimension") {
    for (int T : {2, 4, 9}) {
      for (int dx : {1, 3, 5}) {
        ModelConfig c = cfg;
        c.hsm.time_steps = T;
        c.hsm.input_features = dx;
        ParameterSet ps = make_parameters(c, Rng(3));
        Graph g;
        BoundParams bound(g, ps, false);
        Var h = hsm_forward(g, c.hsm, bound, g.constant(ramp({T, dx})));
        CHECK(g.shape(h) == Shape{c.hsm.hidden_dim});
      }
    }
  }

  SECTION("attention rows are probability distributions") {
    ModelConfig two = cfg;
    two.hsm.num_blocks = 2;
    ParameterSet ps = make_parameters(two, Rng(11));
    Graph g;
    BoundParams bound(g, ps, false);
    HsmTrace trace = hsm_forward_trace(g, two.hsm, bound, g.constant(window_for(two.hsm)));
    REQUIRE(trace.attention.size() == 2);
    for (Var a : trace.attention) {
      const Shape& s = g.shape(a);
      REQUIRE(s == (Shape{4, 4}));
      const auto& v = g.values(a);
      for (int i = 0; i < 4; ++i) {
        double row = 0.0;
        for (int j = 0; j < 4; ++j) {
          CHECK(v[static_cast<std::size_t>(i) * 4 + j] >= 0.0);
          row += v[static_cast<std::size_t>(i) * 4 + j];
        }
        CHECK(std::fabs(row - 1.0) < 1e-12);
      }
    }
  }

  SECTION("evaluation mode is bit-deterministic") {
    Graph g;
    BoundParams bound(g, params, false);
    Tensor w = window_for(cfg.hsm);
    auto v1 = g.values(hsm_forward(g, cfg.hsm, bound, g.constant(w)));
    auto v2 = g.values(hsm_forward(g, cfg.hsm, bound, g.constant(w)));
    CHECK(v1 == v2);
  }

  SECTION("training mode applies dropout") {
    Graph g;
    BoundParams bound(g, params, false);
    Tensor w = window_for(cfg.hsm);
    Rng drop(99);
    auto eval = g.values(hsm_forward(g, cfg.hsm, bound, g.constant(w)));
    auto train = g.values(hsm_forward(g, cfg.hsm, bound, g.constant(w), true, &drop));
    CHECK(eval != train);
    CHECK_THROWS_AS(hsm_forward(g, cfg.hsm, bound, g.constant(w), true, nullptr), ConfigError);
  }

  SECTION("wrong window shape is rejected") {
    Graph g;
    BoundParams bound(g, params, false);
    CHECK_THROWS_AS(hsm_forward(g, cfg.hsm, bound, g.constant(ramp({5, 3}))), ShapeError);
    CHECK_THROWS_AS(hsm_forward(g, cfg.hsm, bound, g.constant(ramp({4, 2}))), ShapeError);
  }
}

TEST_CASE("degradation predictor head") {
  ModelConfig cfg = tiny_config();
  ParameterSet params = make_parameters(cfg, Rng(5));

  SECTION("zero weighting vector annihilates the estimate") {
    ParameterSet p = params;
    for (double& v : p.at("rul.rho").data) v = 0.0;
    Graph g;
    BoundParams bound(g, p, false);
    Var h = g.leaf(ramp({2}), true);
    Var t = g.leaf(Tensor(Shape{}, {0.4}), true);
    CHECK(g.scalar_value(rul_forward(g, cfg.rul, bound, h, t)) == 0.0);
  }

  SECTION("all-ones weighting gives the raw component sum") {
    Graph g;
    BoundParams bound(g, params, false);
    Var h = g.leaf(ramp({2}), true);
    Var t = g.leaf(Tensor(Shape{}, {0.4}), true);
    RulTerms terms = rul_terms(g, cfg.rul, bound, h, t);
    double osum = 0.0;
    for (double v : g.values(terms.o)) osum += v;
    CHECK(g.scalar_value(terms.u) == Approx(osum).epsilon(1e-14));
  }

  SECTION("degenerate single-unit widths match hand arithmetic") {
    ModelConfig c = cfg;
    c.hsm.hidden_dim = 1;
    c.rul.hidden = {1, 1, 1};
    c.rul.terms = 1;
    ParameterSet p = make_parameters(c, Rng(1));
    // c = [h, t] = [0.3, 0.6]; layer k: tanh(w.c + b)
    p.at("rul.layer0.W").data = {0.5, -0.25};
    p.at("rul.layer0.b").data = {0.1};
    p.at("rul.layer1.W").data = {-1.2};
    p.at("rul.layer1.b").data = {0.05};
    p.at("rul.layer2.W").data = {0.7};
    p.at("rul.layer2.b").data = {-0.3};
    p.at("rul.layer3.W").data = {2.0};
    p.at("rul.layer3.b").data = {0.25};
    p.at("rul.rho").data = {-1.5};

    Graph g;
    BoundParams bound(g, p, false);
    Var h = g.constant(Shape{1}, {0.3});
    Var t = g.constant(Shape{}, {0.6});
    const double a0 = std::tanh(0.5 * 0.3 + (-0.25) * 0.6 + 0.1);
    const double a1 = std::tanh(-1.2 * a0 + 0.05);
    const double a2 = std::tanh(0.7 * a1 - 0.3);
    const double o = 2.0 * a2 + 0.25;
    const double expect = o * -1.5;
    CHECK(g.scalar_value(rul_forward(g, c.rul, bound, h, t)) == Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("regulator feature assembly") {
  Graph g;
  Var u = g.constant(Shape{}, {0.5});
  Var gh = g.constant(Shape{2}, {0.1, -0.2});
  Var sh = g.constant(Shape{2}, {0.7, 0.9});

  SECTION("first order") {
    Var f = assemble_pgr_features(u, gh, std::nullopt, 1);
    CHECK(g.shape(f) == Shape{3});
    CHECK(g.values(f) == std::vector<double>{0.5, 0.1, -0.2});
  }

  SECTION("second order") {
    Var f = assemble_pgr_features(u, gh, sh, 2);
    CHECK(g.shape(f) == Shape{5});
    CHECK(g.values(f) == std::vector<double>{0.5, 0.1, -0.2, 0.7, 0.9});
  }

  SECTION("arity mismatches") {
    CHECK_THROWS_AS(assemble_pgr_features(u, gh, std::nullopt, 2), ShapeError);
    CHECK_THROWS_AS(assemble_pgr_features(u, gh, sh, 1), ShapeError);
  }

  SECTION("assembled length matches the regulator's input contract") {
    PgrConfig pc;
    pc.k_pde = 2;
    CHECK(pc.input_dim(2) == 5);
    pc.k_pde = 1;
    CHECK(pc.input_dim(2) == 3);
  }
}

TEST_CASE("regulator forward") {
  ModelConfig cfg = tiny_config();

  SECTION("zero parameters collapse to zero output") {
    ParameterSet p = make_parameters(cfg, Rng(2));
    for (const std::string& name : p.names())
      if (name.rfind("pgr.", 0) == 0)
        for (double& v : p.at(name).data) v = 0.0;
    Graph g;
    BoundParams bound(g, p, false);
    Var f = g.constant(Shape{3}, {0.5, 0.1, -0.2});
    CHECK(g.scalar_value(pgr_forward(g, cfg.pgr, cfg.hsm.hidden_dim, bound, f)) == 0.0);
  }

  SECTION("single-neuron stack matches hand arithmetic") {
    ModelConfig c = cfg;
    c.hsm.hidden_dim = 1;
    c.pgr.hidden = {1};
    c.pgr.k_pde = 1;
    ParameterSet p = make_parameters(c, Rng(3));
    p.at("pgr.layer0.W").data = {0.4, -0.6};  // input [u, du/dh]
    p.at("pgr.layer0.b").data = {0.2};
    p.at("pgr.out.W").data = {1.5};
    p.at("pgr.out.b").data = {-0.1};
    Graph g;
    BoundParams bound(g, p, false);
    Var f = g.constant(Shape{2}, {0.8, 0.3});
    const double hdn = std::tanh(0.4 * 0.8 - 0.6 * 0.3 + 0.2);
    CHECK(g.scalar_value(pgr_forward(g, c.pgr, 1, bound, f)) ==
          Approx(1.5 * hdn - 0.1).epsilon(1e-12));
  }

  SECTION("wrong feature length is rejected") {
    ParameterSet p = make_parameters(cfg, Rng(2));
    Graph g;
    BoundParams bound(g, p, false);
    Var f = g.constant(Shape{4}, {1, 2, 3, 4});
    CHECK_THROWS_AS(pgr_forward(g, cfg.pgr, cfg.hsm.hidden_dim, bound, f), ShapeError);
  }

  SECTION("bounded hidden layers keep output finite") {
    ParameterSet p = make_parameters(cfg, Rng(2));
    Graph g;
    BoundParams bound(g, p, false);
    Var f = g.constant(Shape{3}, {50.0, -80.0, 120.0});
    CHECK(std::isfinite(g.scalar_value(pgr_forward(g, cfg.pgr, cfg.hsm.hidden_dim, bound, f))));
  }
}

TEST_CASE("learned-equation residual") {
  ModelConfig cfg = tiny_config();
  ParameterSet params = make_parameters(cfg, Rng(17));

  auto make_inputs = [&](Graph& g, BoundParams& bound) {
    Var X = g.constant(window_for(cfg.hsm));
    Var h = hsm_forward(g, cfg.hsm, bound, X);
    Var t = g.leaf(Tensor(Shape{}, {0.35}), true);
    return std::pair<Var, Var>(h, t);
  };

  SECTION("stub regulator echoing du/dt gives exactly zero") {
    Graph g;
    BoundParams bound(g, params);
    auto [h, t] = make_inputs(g, bound);
    PredictorFn pred = [&](Graph& gg, Var hh, Var tt) {
      return rul_forward(gg, cfg.rul, bound, hh, tt);
    };
    RegulatorFn echo = [](Graph&, const PdeTerms& terms) { return terms.du_dt; };
    PdeTerms terms = pde_terms_with(g, pred, echo, h, t, 1);
    CHECK(g.scalar_value(terms.r) == 0.0);
  }

  SECTION("identity predictor against a unit-rate equation") {
    Graph g;
    BoundParams bound(g, params);
    auto [h, t] = make_inputs(g, bound);
    PredictorFn pred = [](Graph&, Var, Var tt) { return to_scalar(tt); };
    RegulatorFn one = [](Graph& gg, const PdeTerms&) { return gg.scalar_const(1.0); };
    PdeTerms terms = pde_terms_with(g, pred, one, h, t, 1);
    CHECK(g.scalar_value(terms.du_dt) == 1.0);
    CHECK(g.scalar_value(terms.r) == 0.0);
  }

  SECTION("constant predictor against a constant-rate equation") {
    Graph g;
    BoundParams bound(g, params);
    auto [h, t] = make_inputs(g, bound);
    const double c = 0.75;
    PredictorFn pred = [](Graph& gg, Var, Var) { return gg.scalar_const(3.0); };
    RegulatorFn rate = [&](Graph& gg, const PdeTerms&) { return gg.scalar_const(c); };
    PdeTerms terms = pde_terms_with(g, pred, rate, h, t, 1);
    CHECK(g.scalar_value(terms.du_dt) == 0.0);
    CHECK(g.scalar_value(terms.r) == -c);
  }

  SECTION("full residual produces finite scalar and feature vector") {
    for (int k : {1, 2}) {
      ModelConfig c = tiny_config(k);
      ParameterSet p = make_parameters(c, Rng(23));
      Graph g;
      BoundParams bound(g, p);
      Var X = g.constant(window_for(c.hsm));
      Var h = hsm_forward(g, c.hsm, bound, X);
      Var t = g.leaf(Tensor(Shape{}, {0.2}), true);
      PdeTerms terms = pde_terms(g, c, bound, h, t);
      CHECK(g.shape(terms.features) == Shape{c.pgr.input_dim(c.hsm.hidden_dim)});
      CHECK(std::isfinite(g.scalar_value(terms.r)));
      CHECK((k == 2) == terms.second_h.has_value());
    }
  }
}

TEST_CASE("physics loss gradients match finite differences across all parameters") {
  // Full nested-derivative path: parameters -> h -> u, du/dt, grad_h,
  // second-derivative diagonal -> regulator -> squared residual. The
  // finite-difference oracle sees only loss values.
  const ModelConfig cfg = tiny_config(2);
  ParameterSet params = make_parameters(cfg, Rng(31));
  const Tensor X = window_for(cfg.hsm);

  std::vector<Tensor> inputs;
  for (const std::string& name : params.names()) inputs.push_back(params.at(name));
  inputs.push_back(Tensor(Shape{}, {0.45}));  // run-time leaf last

  auto build = [&](Graph& g, const std::vector<Var>& leaves) {
    std::vector<Var> pvars(leaves.begin(), leaves.end() - 1);
    BoundParams bound(params.names(), pvars);
    Var t = leaves.back();
    Var h = hsm_forward(g, cfg.hsm, bound, g.constant(X));
    PdeTerms terms = pde_terms(g, cfg, bound, h, t);
    return mul(terms.r, terms.r);
  };
  CHECK(check_gradients(build, inputs, 1e-5) < 1e-4);
}

TEST_CASE("data loss gradients match finite differences across all parameters") {
  const ModelConfig cfg = tiny_config(1);
  ParameterSet params = make_parameters(cfg, Rng(37));
  const Tensor X = window_for(cfg.hsm, 2.0);

  std::vector<Tensor> inputs;
  for (const std::string& name : params.names()) inputs.push_back(params.at(name));

  auto build = [&](Graph& g, const std::vector<Var>& leaves) {
    BoundParams bound(params.names(), leaves);
    Var h = hsm_forward(g, cfg.hsm, bound, g.constant(X));
    Var t = g.leaf(Tensor(Shape{}, {0.3}), true);
    Var u = rul_forward(g, cfg.rul, bound, h, t);
    Var err = sub(u, g.scalar_const(0.8));
    return mul(err, err);
  };
  CHECK(check_gradients(build, inputs, 1e-5) < 1e-5);
}

TEST_CASE("whole-model prediction is deterministic") {
  ModelConfig cfg = tiny_config();
  ParameterSet params = make_parameters(cfg, Rng(41));
  Tensor w = window_for(cfg.hsm);
  const double a = predict(cfg, params, w, 0.5);
  const double b = predict(cfg, params, w, 0.5);
  CHECK(a == b);
  CHECK(std::isfinite(a));
  CHECK(predict(cfg, params, w, 0.9) != a);
}

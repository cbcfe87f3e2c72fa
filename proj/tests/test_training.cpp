#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "metapinn/adam.hpp"
#include "metapinn/errors.hpp"
#include "metapinn/losses.hpp"
#include "metapinn/meta.hpp"
#include "metapinn/networks.hpp"

using namespace metapinn;
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
  cfg.hsm.dropout_rate = 0.0;
  cfg.rul.hidden = {5, 4, 3};
  cfg.rul.terms = 2;
  cfg.pgr.hidden = {4, 3};
  cfg.pgr.k_pde = k_pde;
  return cfg;
}

/// Windows from a fleet of toy units whose features track remaining life
/// linearly, labels scaled to [0, 1].
std::vector<SampleWindow> toy_samples(const HsmConfig& cfg, int unit, int life, int count) {
  std::vector<SampleWindow> out;
  Rng rng(900 + static_cast<std::uint64_t>(unit));
  for (int s = 0; s < count; ++s) {
    const int end_cycle = cfg.time_steps + s;
    if (end_cycle > life) break;
    SampleWindow w;
    w.features = Tensor::zeros({cfg.time_steps, cfg.input_features});
    for (int r = 0; r < cfg.time_steps; ++r) {
      const int cycle = end_cycle - cfg.time_steps + 1 + r;
      const double frac = static_cast<double>(life - cycle) / life;
      for (int f = 0; f < cfg.input_features; ++f)
        w.features.data[static_cast<std::size_t>(r) * cfg.input_features + f] =
            (0.5 + 0.1 * f) * frac + 0.02 * rng.normal();
    }
    w.run_time = static_cast<double>(end_cycle) / life;
    w.rul = static_cast<double>(life - end_cycle) / life;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<MetaTask> toy_tasks(const HsmConfig& cfg, int n_tasks) {
  std::vector<MetaTask> tasks;
  for (int u = 0; u < n_tasks; ++u) {
    const int life = 14 + 2 * (u % 3);
    std::vector<SampleWindow> all = toy_samples(cfg, u, life, 12);
    MetaTask t;
    t.id = u;
    t.provenance = "toy unit " + std::to_string(u);
    for (std::size_t i = 0; i < all.size(); ++i)
      (i % 2 == 0 ? t.support : t.query).push_back(all[i]);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

/// Parameters forced to produce a constant estimate of zero, with the
/// regulator output pinned at `rate`.
ParameterSet constant_zero_params(const ModelConfig& cfg, double rate) {
  ParameterSet p = make_parameters(cfg, Rng(3));
  for (const std::string& name : p.names())
    if (name.rfind("rul.", 0) == 0 || name.rfind("pgr.", 0) == 0)
      for (double& v : p.at(name).data) v = 0.0;
  p.at("pgr.out.b").data[0] = rate;
  return p;
}

ParameterSet scalar_params(double value) {
  ParameterSet p;
  p.add("theta", Tensor(Shape{}, {value}));
  return p;
}

}  // namespace

TEST_CASE("loss weights validate") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.data = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("data loss") {
  ModelConfig cfg = tiny_config();
  ParameterSet zero = constant_zero_params(cfg, 0.0);

  SECTION("perfect fit gives zero") {
    std::vector<SampleWindow> batch = toy_samples(cfg.hsm, 0, 20, 3);
    for (auto& s : batch) s.rul = 0.0;  // estimate is identically zero
    CHECK(data_loss(cfg, zero, batch) == 0.0);
  }

  SECTION("single sample squared error by hand") {
    ParameterSet p = zero;
    p.at("rul.layer3.b").data = {1.0, 0.0};  // estimate = 1 for any input
    for (double& v : p.at("rul.rho").data) v = 1.0;
    std::vector<SampleWindow> batch = toy_samples(cfg.hsm, 0, 20, 1);
    batch[0].rul = 3.0;
    CHECK(data_loss(cfg, p, batch) == 4.0);
  }

  SECTION("nonnegative for arbitrary parameters") {
    ParameterSet p = make_parameters(cfg, Rng(8));
    std::vector<SampleWindow> batch = toy_samples(cfg.hsm, 1, 20, 4);
    CHECK(data_loss(cfg, p, batch) >= 0.0);
  }

  SECTION("empty batch rejected") {
    std::vector<SampleWindow> none;
    CHECK_THROWS_AS(data_loss(cfg, zero, none), Error);
  }
}

TEST_CASE("physics loss") {
  ModelConfig cfg = tiny_config();
  std::vector<SampleWindow> batch = toy_samples(cfg.hsm, 0, 20, 2);

  SECTION("zero networks give zero residual") {
    ParameterSet p = constant_zero_params(cfg, 0.0);
    CHECK(physics_loss(cfg, p, batch) == 0.0);
  }

  SECTION("constant rate c gives mean residual c squared") {
    ParameterSet p = constant_zero_params(cfg, 0.5);
    // estimate is constant so du/dt = 0 and r = -c at every point
    CHECK(physics_loss(cfg, p, batch) == 0.25);
  }

  SECTION("empty batch rejected") {
    std::vector<SampleWindow> none;
    ParameterSet p = constant_zero_params(cfg, 0.0);
    CHECK_THROWS_AS(physics_loss(cfg, p, none), Error);
  }
}

TEST_CASE("total loss combines the two terms") {
  ModelConfig cfg = tiny_config();
  std::vector<SampleWindow> batch = toy_samples(cfg.hsm, 0, 20, 2);
  batch[0].rul = 1.0;
  batch[1].rul = 0.0;
  ParameterSet p = constant_zero_params(cfg, -0.5);
  // data: ((0-1)^2 + 0)/2 = 0.5; physics: r = 0 - (-0.5), mean r^2 = 0.25

  SECTION("hand-weighted combination") {
    LossWeights w{2.0, 4.0};
    BatchLoss l = total_loss(cfg, p, batch, w);
    CHECK(l.data == 0.5);
    CHECK(l.physics == 0.25);
    CHECK(l.total == 2.0);
  }

  SECTION("physics weight zero reduces to the data loss") {
    LossWeights w{1.0, 0.0};
    BatchLoss l = total_loss(cfg, p, batch, w);
    CHECK(l.total == data_loss(cfg, p, batch));
  }

  SECTION("unit weights sum the parts") {
    LossWeights w{1.0, 1.0};
    BatchLoss l = total_loss(cfg, p, batch, w);
    CHECK(l.total == Approx(data_loss(cfg, p, batch) + physics_loss(cfg, p, batch)).epsilon(1e-14));
  }
}

TEST_CASE("batch gradient matches finite differences of the batch loss") {
  ModelConfig cfg = tiny_config();
  ParameterSet params = make_parameters(cfg, Rng(21));
  std::vector<SampleWindow> pool = toy_samples(cfg.hsm, 2, 20, 3);
  std::vector<int> idx = {0, 1, 2};
  LossWeights w{1.0, 0.7};

  ParameterSet grads = params;
  Graph arena;
  BatchLoss l = total_loss_grad(cfg, params, pool, idx, w, grads, arena);
  CHECK(l.total == Approx(w.data * l.data + w.physics * l.physics).epsilon(1e-14));
  BatchLoss check = total_loss(cfg, params, pool, w);
  CHECK(l.total == Approx(check.total).epsilon(1e-12));

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t ti = 0; ti < params.count(); ++ti) {
    for (std::size_t j = 0; j < params.tensor(ti).data.size(); ++j) {
      ParameterSet probe = params;
      probe.tensor(ti).data[j] += h;
      const double up = total_loss(cfg, probe, pool, w).total;
      probe.tensor(ti).data[j] -= 2 * h;
      const double dn = total_loss(cfg, probe, pool, w).total;
      const double fd = (up - dn) / (2 * h);
      const double an = grads.tensor(ti).data[j];
      const double denom = std::max({1.0, std::fabs(fd), std::fabs(an)});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("optimizer follows the printed update rule") {
  SECTION("zero gradient leaves parameters unchanged") {
    ParameterSet p = scalar_params(1.5);
    AdamState st(p);
    adam_step(st, p, scalar_params(0.0));
    CHECK(p.at("theta").data[0] == 1.5);
  }

  SECTION("one-step hand trace") {
    ParameterSet p = scalar_params(1.0);
    AdamState st(p);
    adam_step(st, p, scalar_params(2.0));
    // m_hat = 2, v_hat = 4, step = 0.001 * 2 / sqrt(4 + 1e-8)
    const double expect = 1.0 - 0.001 * 2.0 / std::sqrt(4.0 + 1e-8);
    CHECK(p.at("theta").data[0] == Approx(expect).epsilon(1e-15));
    CHECK(p.at("theta").data[0] == Approx(0.999).margin(1e-8));
  }

  SECTION("opposite gradients displace symmetrically") {
    ParameterSet a = scalar_params(0.0);
    ParameterSet b = scalar_params(0.0);
    AdamState sa(a), sb(b);
    for (int i = 0; i < 5; ++i) {
      adam_step(sa, a, scalar_params(2.0 + i));
      adam_step(sb, b, scalar_params(-(2.0 + i)));
    }
    CHECK(a.at("theta").data[0] == -b.at("theta").data[0]);
  }

  SECTION("misaligned gradients rejected") {
    ParameterSet p = scalar_params(1.0);
    AdamState st(p);
    ParameterSet wrong;
    wrong.add("other", Tensor(Shape{}, {1.0}));
    CHECK_THROWS_AS(adam_step(st, p, wrong), ShapeError);
  }
}

TEST_CASE("inner adaptation") {
  ModelConfig cfg = tiny_config();
  ParameterSet phi = make_parameters(cfg, Rng(33));
  std::vector<SampleWindow> data = toy_samples(cfg.hsm, 0, 24, 10);
  MetaConfig meta;
  meta.inner_batch = 4;
  meta.weights = {1.0, 0.1};

  SECTION("zero steps returns the initialization exactly") {
    meta.inner_steps = 0;
    ParameterSet theta = inner_adapt(cfg, phi, data, meta, Rng(1));
    CHECK(max_abs_diff(theta, phi) == 0.0);
  }

  SECTION("the initialization is never mutated") {
    meta.inner_steps = 4;
    ParameterSet before = phi;
    (void)inner_adapt(cfg, phi, data, meta, Rng(1));
    CHECK(max_abs_diff(before, phi) == 0.0);
  }

  SECTION("loss decreases on an easy task") {
    meta.inner_steps = 30;
    meta.inner_batch = 10;
    ParameterSet theta = inner_adapt(cfg, phi, data, meta, Rng(1));
    const double before = total_loss(cfg, phi, data, meta.weights).total;
    const double after = total_loss(cfg, theta, data, meta.weights).total;
    CHECK(after < before);
  }

  SECTION("support smaller than the batch size still works") {
    meta.inner_steps = 2;
    meta.inner_batch = 64;
    std::vector<SampleWindow> small(data.begin(), data.begin() + 3);
    CHECK_NOTHROW(inner_adapt(cfg, phi, small, meta, Rng(1)));
  }

  SECTION("empty task data rejected") {
    std::vector<SampleWindow> none;
    CHECK_THROWS_AS(inner_adapt(cfg, phi, none, meta, Rng(1)), Error);
  }
}

TEST_CASE("outer update arithmetic") {
  ModelConfig cfg = tiny_config();
  ParameterSet phi = make_parameters(cfg, Rng(44));

  SECTION("converged tasks leave the initialization fixed") {
    std::vector<ParameterSet> thetas = {phi, phi, phi};
    ParameterSet next = meta_update(phi, thetas, 0.7);
    CHECK(max_abs_diff(next, phi) == 0.0);
  }

  SECTION("single task with unit rate jumps to it") {
    ParameterSet theta = make_parameters(cfg, Rng(45));
    std::vector<ParameterSet> one = {theta};
    ParameterSet next = meta_update(phi, one, 1.0);
    CHECK(max_abs_diff(next, theta) < 1e-15);
  }

  SECTION("hand-computed average direction") {
    ParameterSet zero = scalar_params(0.0);
    std::vector<ParameterSet> two = {scalar_params(2.0), scalar_params(4.0)};
    ParameterSet next = meta_update(zero, two, 0.5);
    CHECK(next.at("theta").data[0] == 1.5);
  }

  SECTION("update is exactly affine in the displacements") {
    // displacements in powers of two so the scaling is exact in floating point
    ParameterSet base = scalar_params(0.5);
    auto displaced = [&](double d) { return scalar_params(0.5 + d); };
    std::vector<ParameterSet> once = {displaced(0.25), displaced(-0.5)};
    std::vector<ParameterSet> twice = {displaced(0.5), displaced(-1.0)};
    ParameterSet n1 = meta_update(base, once, 0.25);
    ParameterSet n2 = meta_update(base, twice, 0.25);
    CHECK(n2.at("theta").data[0] - 0.5 == 2.0 * (n1.at("theta").data[0] - 0.5));
  }

  SECTION("errors") {
    std::vector<ParameterSet> none;
    CHECK_THROWS_AS(meta_update(phi, none, 0.1), Error);
    std::vector<ParameterSet> wrong = {scalar_params(1.0)};
    CHECK_THROWS_AS(meta_update(phi, wrong, 0.1), ShapeError);
  }
}

TEST_CASE("episodic training driver", "[meta_train]") {
  ModelConfig cfg = tiny_config();
  std::vector<MetaTask> tasks = toy_tasks(cfg.hsm, 8);
  MetaConfig meta;
  meta.inner_steps = 3;
  meta.inner_batch = 4;
  meta.meta_batch = 2;
  meta.epochs = 2;
  meta.val_fraction = 0.25;
  meta.weights = {1.0, 0.1};

  SECTION("degenerate run leaves parameters fixed but logs") {
    MetaConfig degen = meta;
    degen.inner_steps = 0;
    degen.epochs = 2;
    MetaResult r = meta_train(cfg, tasks, degen, 7);
    REQUIRE_FALSE(r.log.empty());
    // no inner steps means zero displacement, so validation never moves
    CHECK(r.log.front().val_loss == r.log.back().val_loss);
    CHECK(max_abs_diff(r.best, r.final_params) == 0.0);
  }

  SECTION("fixed seed reproduces the trajectory bit for bit") {
    MetaResult a = meta_train(cfg, tasks, meta, 11);
    MetaResult b = meta_train(cfg, tasks, meta, 11);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].iteration == b.log[i].iteration);
      CHECK(a.log[i].train_loss == b.log[i].train_loss);
      CHECK((a.log[i].val_loss == b.log[i].val_loss ||
             (std::isnan(a.log[i].val_loss) && std::isnan(b.log[i].val_loss))));
    }
    CHECK(max_abs_diff(a.final_params, b.final_params) == 0.0);
    CHECK(max_abs_diff(a.best, b.best) == 0.0);
  }

  SECTION("different seeds differ") {
    MetaResult a = meta_train(cfg, tasks, meta, 11);
    MetaResult b = meta_train(cfg, tasks, meta, 12);
    CHECK(max_abs_diff(a.final_params, b.final_params) > 0.0);
  }

  SECTION("training improves the held-out validation loss") {
    MetaConfig longer = meta;
    longer.epochs = 8;
    longer.inner_steps = 5;
    MetaResult r = meta_train(cfg, tasks, longer, 5);
    CHECK(std::isfinite(r.initial_val));
    CHECK(r.best_val < r.initial_val);
  }

  SECTION("too few tasks is an error") {
    std::vector<MetaTask> two = {tasks[0], tasks[1]};
    MetaConfig big = meta;
    big.meta_batch = 5;
    big.val_fraction = 0.0;
    CHECK_THROWS_AS(meta_train(cfg, two, big, 1), Error);
  }

  SECTION("elapsed seconds are nondecreasing") {
    MetaResult r = meta_train(cfg, tasks, meta, 3);
    for (std::size_t i = 1; i < r.log.size(); ++i)
      CHECK(r.log[i].seconds >= r.log[i - 1].seconds);
  }
}

TEST_CASE("few-shot adaptation") {
  ModelConfig cfg = tiny_config();
  std::vector<MetaTask> tasks = toy_tasks(cfg.hsm, 8);
  MetaConfig meta;
  meta.inner_steps = 5;
  meta.inner_batch = 4;
  meta.meta_batch = 2;
  meta.epochs = 6;
  meta.val_fraction = 0.25;
  meta.weights = {1.0, 0.1};
  MetaResult trained = meta_train(cfg, tasks, meta, 19);

  SECTION("zero-shot returns the initialization untouched") {
    std::vector<SampleWindow> none;
    ParameterSet theta = few_shot_adapt(cfg, trained.best, none, meta, Rng(2));
    CHECK(max_abs_diff(theta, trained.best) == 0.0);
  }

  SECTION("adaptation on a seen task beats zero-shot on its query set") {
    MetaConfig adapt = meta;
    adapt.inner_steps = 20;
    adapt.inner_batch = 6;
    const MetaTask& task = tasks[0];
    ParameterSet theta = few_shot_adapt(cfg, trained.best, task.support, adapt, Rng(2));
    const double zero_shot = total_loss(cfg, trained.best, task.query, meta.weights).total;
    const double adapted = total_loss(cfg, theta, task.query, meta.weights).total;
    CHECK(adapted < zero_shot);
  }
}

TEST_CASE("training log serialization") {
  std::vector<LogRow> log(3);
  log[0] = {0, 1.5, std::numeric_limits<double>::quiet_NaN(), 0.1};
  log[1] = {1, 1.2, 0.9, 0.2};
  log[2] = {2, 1.0, 0.8, 0.3};
  const std::string path = "test_log_tmp.csv";
  write_training_log(path, log);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "iteration,train_loss,val_loss");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 3);
  in.close();
  std::remove(path.c_str());
}

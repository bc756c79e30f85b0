#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "nca/trainer.hpp"

using namespace nca;

namespace {

const ChannelLayout kLayout;
const int kDp = 8 * kLayout.n;

// Independent loss: straight transcription of the objective, no shared helpers.
double loss_oracle(const CellGrid& g, const TrainTarget& t) {
  double total = 0;
  const int k = kLayout.k;
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) {
      if (!t.legality(r, c)) continue;
      const double alive = t.alive(r, c) ? 1.0 : 0.0;
      double mx = -1e300;
      for (int j = 0; j < k; ++j) mx = std::max(mx, double(g.at(r, c, j)));
      double z = 0;
      for (int j = 0; j < k; ++j) z += std::exp(double(g.at(r, c, j)) - mx);
      double kl = 0;
      for (int j = 0; j < k; ++j) {
        const double p = t.class_probs.at(r, c, j);
        if (p <= 0) continue;
        const double log_h = double(g.at(r, c, j)) - mx - std::log(z);
        kl += p * (std::log(p) - log_h);
      }
      const double a = g.at(r, c, kLayout.alpha_index());
      total += kl * alive + (a - alive) * (a - alive);
    }
  return total;
}

TrainTarget target_from(const MapSample& s) { return TrainTarget::from_sample(s, kLayout.k); }

MapSample tiny_sample(int h, int w) {
  MapSample s(h, w);
  s.location = "x";
  s.timestamp = "t";
  return s;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 4;
  cfg.pool_size = 8;
  cfg.epochs = 6;
  cfg.damage_radius_min = 1;
  cfg.damage_radius_max = 3;
  cfg.seed = 17;
  return cfg;
}

ModelConfig small_model() {
  ModelConfig m;
  m.hidden_dim = 16;
  return m;
}

}  // namespace

TEST_CASE("loss examples") {
  SUBCASE("perfect prediction") {
    auto s = tiny_sample(3, 3);
    s.set_cls(0, 0, 2);
    s.set_cls(1, 2, 0);
    const auto t = target_from(s);
    CellGrid g(3, 3, kLayout);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        if (!t.alive(r, c)) continue;
        for (int j = 0; j < 4; ++j) g.at(r, c, j) = t.class_probs.at(r, c, j) > 0 ? 30.0f : -30.0f;
        g.at(r, c, kLayout.alpha_index()) = 1;
      }
    CHECK(loss(g, t).total < 1e-20);
  }
  SUBCASE("one alive cell against a uniform prediction") {
    auto s = tiny_sample(2, 2);
    s.set_cls(1, 1, 1);
    CellGrid g(2, 2, kLayout);
    g.at(1, 1, kLayout.alpha_index()) = 1;
    const auto res = loss(g, target_from(s));
    CHECK(res.total == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(res.per_cell[3] == res.total);
    CHECK(res.per_cell[0] == 0);
  }
  SUBCASE("all-dead target with half alpha") {
    MapSample s = tiny_sample(4, 5);
    s.legality = BoolGrid(4, 5, true);
    TrainTarget t = target_from(s);
    CellGrid g(4, 5, kLayout);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) g.at(r, c, kLayout.alpha_index()) = 0.5f;
    CHECK(loss(g, t).total == doctest::Approx(0.25 * 20).epsilon(1e-12));
  }
}

TEST_CASE("loss matches the direct transcription and is non-negative") {
  Rng rng(21);
  const auto ds = synth_generate(4, 1, 6, 12, 12);
  for (const auto& s : ds.samples) {
    const auto t = target_from(s);
    const auto g = testing::random_grid<float>(rng, 12, 12, kLayout, -4, 4);
    const double got = loss(g, t).total;
    CHECK(got >= 0);
    CHECK(got == doctest::Approx(loss_oracle(g, t)).epsilon(1e-9));
    // Hidden channels are not read.
    auto h = g;
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 12; ++c)
        for (int ch = kLayout.hidden_begin(); ch < kLayout.n; ++ch) h.at(r, c, ch) = 99;
    CHECK(loss(h, t).total == got);
  }
}

TEST_CASE("loss gradient matches finite differences") {
  Rng rng(22);
  const auto ds = synth_generate(5, 1, 1, 8, 8);
  const auto t = target_from(ds.samples[0]);
  auto g = testing::random_grid<double>(rng, 8, 8, kLayout, -2, 2);
  const auto grad = loss_gradient(g, t);
  for (int trial = 0; trial < 200; ++trial) {
    const auto i = uniform_index(rng, g.values().size());
    const double keep = g.values()[i];
    const double h = 1e-6;
    g.values()[i] = keep + h;
    const double up = loss(g, t).total;
    g.values()[i] = keep - h;
    const double down = loss(g, t).total;
    g.values()[i] = keep;
    CHECK(std::abs((up - down) / (2 * h) - grad.values()[i]) < 1e-6);
  }
}

TEST_CASE("backward with zero parameters leaves the first layer untouched") {
  const auto ds = synth_generate(6, 1, 1, 12, 12);
  const auto t = target_from(ds.samples[0]);
  Rng rng(3);
  const Disc disc = sample_disc_placement(rng, 12, 12, 0.5);
  const CellGrid start = grow_state(t, disc, kLayout);
  const InductionField field = make_induction(t, disc, kLayout.k);
  const auto params = ModelParams::zeros(kDp, 32, kLayout.n);
  const StepConfig cfg;
  Tape<float> tape;
  const auto traj = run(start, params, cfg, t.legality, &field, rng, 8, 0, &tape);
  const auto grads = backward(tape, traj.final, t, params, cfg, t.legality);
  for (float v : grads.w1) CHECK(v == 0.0f);
  for (float v : grads.b1) CHECK(v == 0.0f);
  // relu(0) = 0 kills every hidden activation, so w2 sees zero inputs too.
  double w2_norm = 0;
  for (float v : grads.w2) w2_norm += std::abs(v);
  CHECK(w2_norm == 0.0);

  // Fresh parameters have a random first layer and a zero output layer: the
  // rollout is still constant, nothing reaches w1/b1, but w2 does see gradient.
  Rng init(9);
  const auto fresh = ModelParams::initial(kDp, 32, kLayout.n, init);
  Tape<float> tape2;
  Rng rng2(3);
  const auto traj2 = run(start, fresh, cfg, t.legality, &field, rng2, 8, 0, &tape2);
  const auto grads2 = backward(tape2, traj2.final, t, fresh, cfg, t.legality);
  double sum = 0;
  for (float v : grads2.w2) sum += std::abs(v);
  CHECK(sum > 0);
  for (float v : grads2.w1) CHECK(v == 0.0f);
  for (float v : grads2.b1) CHECK(v == 0.0f);
}

TEST_CASE("backward matches central finite differences in 64-bit") {
  const auto ds = synth_generate(7, 1, 1, 12, 12);
  const auto t = target_from(ds.samples[0]);
  Rng rng(31);
  const auto params = testing::random_params<double>(rng, kDp, 24, kLayout.n, 0.05);
  const Disc disc = sample_disc_placement(rng, 12, 12, 0.5);
  const auto start = grow_state(t, disc, kLayout).cast<double>();
  const InductionField field = make_induction(t, disc, kLayout.k);
  const StepConfig cfg;
  Tape<double> tape;
  const auto traj = run(start, params, cfg, t.legality, &field, rng, 8, 0, &tape);
  const auto grads = backward(tape, traj.final, t, params, cfg, t.legality);

  auto probe = params;
  auto check_layer = [&](std::vector<double>& weights, const std::vector<double>& analytic) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto i = uniform_index(rng, weights.size());
      const double keep = weights[i];
      const double h = 1e-6;
      weights[i] = keep + h;
      const double up = loss(replay(tape, probe, cfg, t.legality), t).total;
      weights[i] = keep - h;
      const double down = loss(replay(tape, probe, cfg, t.legality), t).total;
      weights[i] = keep;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - analytic[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  };
  check_layer(probe.w1, grads.w1);
  check_layer(probe.b1, grads.b1);
  check_layer(probe.w2, grads.w2);
}

TEST_CASE("backward is deterministic and checks shapes") {
  const auto ds = synth_generate(8, 1, 1, 10, 10);
  const auto t = target_from(ds.samples[0]);
  Rng rng(4);
  const auto params = testing::random_params<float>(rng, kDp, 16, kLayout.n, 0.05);
  const auto start = grow_state(t, sample_disc_placement(rng, 10, 10, 0.5), kLayout);
  Tape<float> tape;
  const auto traj = run(start, params, StepConfig{}, t.legality, nullptr, rng, 5, 0, &tape);
  const auto a = backward(tape, traj.final, t, params, StepConfig{}, t.legality);
  const auto b = backward(tape, traj.final, t, params, StepConfig{}, t.legality);
  CHECK(a == b);
  const auto wrong_in = ModelParams::zeros(kDp - 8, 16, kLayout.n);
  CHECK_THROWS_AS(backward(tape, traj.final, t, wrong_in, StepConfig{}, t.legality), ContractViolation);
  const auto wrong_out = ModelParams::zeros(kDp, 16, kLayout.n - 1);
  CHECK_THROWS_AS(backward(tape, traj.final, t, wrong_out, StepConfig{}, t.legality), ContractViolation);
  CHECK_THROWS_AS(backward(tape, CellGrid(9, 10, kLayout), t, params, StepConfig{}, t.legality), ContractViolation);
}

TEST_CASE("adam examples") {
  Rng rng(5);
  const auto start = testing::random_params<float>(rng, 4, 3, 2, 1.0);

  SUBCASE("zero gradient") {
    auto p = start;
    auto state = AdamState::for_params(p, 1e-2);
    adam_step(p, ModelParams::zeros(4, 3, 2), state);
    CHECK(p == start);
    CHECK(state.step == 1);
  }
  SUBCASE("lr zero") {
    auto p = start;
    auto state = AdamState::for_params(p, 0.0);
    const auto g = testing::random_params<float>(rng, 4, 3, 2, 1.0);
    for (int i = 0; i < 10; ++i) adam_step(p, g, state);
    CHECK(p == start);
  }
  SUBCASE("constant gradient moves each weight by lr against its sign") {
    auto p = ModelParams::zeros(4, 3, 2);
    auto g = testing::random_params<float>(rng, 4, 3, 2, 1.0);
    const double lr = 1e-3;
    auto state = AdamState::for_params(p, lr);
    const int steps = 1000;
    std::vector<float> before = p.w1;
    for (int i = 0; i < steps; ++i) {
      before = p.w1;
      adam_step(p, g, state);
    }
    for (std::size_t i = 0; i < p.w1.size(); ++i) {
      const double expected = -lr * steps * (g.w1[i] > 0 ? 1 : -1);
      CHECK(p.w1[i] == doctest::Approx(expected).epsilon(1e-3));
      CHECK(std::abs(double(p.w1[i]) - double(before[i])) == doctest::Approx(lr).epsilon(1e-2));
    }
    for (float b2 : p.b2) CHECK(b2 == 0.0f);
  }
}

TEST_CASE("per-layer gradient normalization") {
  Rng rng(6);
  auto g = testing::random_params<float>(rng, 5, 4, 3, 2.0);
  g.b1.assign(g.b1.size(), 0.0f);
  normalize_per_layer(g);
  for (const auto* t : {&g.w1, &g.w2}) {
    double sq = 0;
    for (float v : *t) sq += double(v) * v;
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (float v : g.b1) CHECK(v == 0.0f);
}

TEST_CASE("train config") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.lr_at(0) == 2e-3);
  CHECK(cfg.lr_at(34999) == 2e-3);
  CHECK(cfg.lr_at(35000) == doctest::Approx(2e-4));
  auto bad = cfg;
  bad.task_mix.grow = 0.5;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = cfg;
  bad.diameter_ratio = 0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = cfg;
  bad.damage_radius_min = 5;
  bad.damage_radius_max = 4;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("rollout starts") {
  const auto ds = synth_generate(9, 1, 2, 80, 80);
  const auto t0 = target_from(ds.samples[0]);
  TrainConfig cfg;
  Rng rng(7);

  SUBCASE("grow on 80x80 uses a diameter-40 disc and wakes only legal disc cells") {
    const auto start = make_rollout_start(PoolEntry{}, Task::grow, 0, t0, cfg, kLayout, rng);
    CHECK(start.task == Task::grow);
    CHECK(start.disc.diameter == 40);
    const BoolGrid disc = start.disc.mask(80, 80);
    for (int r = 0; r < 80; ++r)
      for (int c = 0; c < 80; ++c) {
        const bool expect = disc(r, c) && t0.legality(r, c);
        CHECK((start.grid.alpha(r, c) == 1.0f) == expect);
        CHECK(start.field.region(r, c) == expect);
        if (expect) {
          CHECK(start.grid.at(r, c, kLayout.n - 1) == 1.0f);
          CHECK(start.grid.at(r, c, 0) == 0.0f);
        }
      }
  }

  PoolEntry entry;
  entry.target = 0;
  entry.task = Task::grow;
  entry.disc = sample_disc_placement(rng, 80, 80, 0.5);
  entry.state = testing::random_grid<float>(rng, 80, 80, kLayout);

  SUBCASE("persist keeps state and disc") {
    const auto start = make_rollout_start(entry, Task::persist, 0, t0, cfg, kLayout, rng);
    CHECK(start.grid == entry.state);
    CHECK(start.disc == entry.disc);
  }
  SUBCASE("regenerate with radius 0 leaves the state unchanged") {
    cfg.damage_radius_min = 0;
    cfg.damage_radius_max = 0;
    const auto start = make_rollout_start(entry, Task::regenerate, 0, t0, cfg, kLayout, rng);
    CHECK(start.task == Task::regenerate);
    CHECK(start.grid == entry.state);
  }
  SUBCASE("regenerate zeroes a disc within the configured radius") {
    cfg.damage_radius_min = 4;
    cfg.damage_radius_max = 4;
    const auto start = make_rollout_start(entry, Task::regenerate, 0, t0, cfg, kLayout, rng);
    int zeroed = 0;
    for (int r = 0; r < 80; ++r)
      for (int c = 0; c < 80; ++c) {
        bool all_zero = true;
        for (float v : start.grid.cell(r, c)) all_zero &= v == 0.0f;
        zeroed += all_zero;
      }
    CHECK(zeroed > 0);
    CHECK(zeroed <= int(std::ceil(std::numbers::pi * 16)) + 1);
  }
  SUBCASE("transform to the same target is persist") {
    const auto start = make_rollout_start(entry, Task::transform, 0, t0, cfg, kLayout, rng);
    CHECK(start.task == Task::persist);
    CHECK(start.grid == entry.state);
    CHECK(start.disc == entry.disc);
  }
  SUBCASE("transform to another target keeps the state with a fresh disc from the new target") {
    const auto t1 = target_from(ds.samples[1]);
    const auto start = make_rollout_start(entry, Task::transform, 1, t1, cfg, kLayout, rng);
    CHECK(start.task == Task::transform);
    CHECK(start.grid == entry.state);
    const BoolGrid disc = start.disc.mask(80, 80);
    for (int r = 0; r < 80; ++r)
      for (int c = 0; c < 80; ++c)
        if (start.field.region(r, c)) {
          CHECK(disc(r, c));
          CHECK(start.field.targets.at(r, c, t1.cls(r, c)) == 1.0f);
        }
  }
  SUBCASE("unseeded entries always grow") {
    const auto start = make_rollout_start(PoolEntry{}, Task::regenerate, 0, t0, cfg, kLayout, rng);
    CHECK(start.task == Task::grow);
  }
}

TEST_CASE("apply_damage uses an open disc") {
  CellGrid g(9, 9, kLayout);
  for (auto& v : g.values()) v = 1;
  apply_damage(g, 4, 4, 2);
  CHECK(g.alpha(4, 4) == 0.0f);
  CHECK(g.alpha(4, 5) == 0.0f);
  CHECK(g.alpha(4, 6) == 1.0f);  // distance exactly 2 survives
  CHECK(g.alpha(0, 0) == 1.0f);
  CHECK_THROWS_AS(apply_damage(g, 4, 4, -1), ContractViolation);
}

TEST_CASE("train with zero epochs returns the initial parameters") {
  const auto ds = synth_generate(10, 1, 3, 12, 12);
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto result = train(ds.split(true), small_model(), StepConfig{}, cfg);
  CHECK(result.log.empty());
  std::vector<TrainTarget> targets;
  for (const auto* s : ds.split(true)) targets.push_back(target_from(*s));
  const Trainer fresh(targets, small_model(), StepConfig{}, cfg);
  CHECK(result.params == fresh.params());
  CHECK_THROWS_AS(train({}, small_model(), StepConfig{}, cfg), ContractViolation);
}

TEST_CASE("pool size and shapes are conserved across epochs") {
  const auto a = synth_generate(11, 1, 4, 12, 12);
  const auto b = synth_generate(12, 1, 4, 16, 14);
  std::vector<TrainTarget> targets;
  for (const auto& s : a.samples) targets.push_back(target_from(s));
  for (const auto& s : b.samples) targets.push_back(target_from(s));
  auto cfg = small_config();
  cfg.epochs = 12;
  Trainer trainer(targets, small_model(), StepConfig{}, cfg);
  while (!trainer.done()) {
    const auto log = trainer.run_epoch(2);
    CHECK(std::isfinite(log.loss));
    CHECK(log.tasks[0] + log.tasks[1] + log.tasks[2] + log.tasks[3] == cfg.batch_size);
    const auto& pool = trainer.state().pool;
    REQUIRE(int(pool.size()) == cfg.pool_size);
    for (const auto& e : pool) {
      if (!e.seeded()) continue;
      const auto& t = targets[std::size_t(e.target)];
      CHECK(e.state.height() == t.height());
      CHECK(e.state.width() == t.width());
    }
  }
  CHECK(trainer.state().epoch == 12);
}

TEST_CASE("training is deterministic across thread counts") {
  const auto ds = synth_generate(13, 1, 4, 12, 12);
  std::vector<TrainTarget> targets;
  for (const auto& s : ds.samples) targets.push_back(target_from(s));
  const auto cfg = small_config();
  Trainer one(targets, small_model(), StepConfig{}, cfg);
  Trainer three(targets, small_model(), StepConfig{}, cfg);
  while (!one.done()) {
    one.run_epoch(1);
    three.run_epoch(3);
  }
  CHECK(one.state() == three.state());
  Trainer other_seed(targets, small_model(), StepConfig{}, [&] {
    auto c = cfg;
    c.seed = 18;
    return c;
  }());
  CHECK_FALSE(other_seed.params() == one.params());
}

TEST_CASE("resuming from a copied state continues bit for bit") {
  const auto ds = synth_generate(14, 1, 4, 12, 12);
  std::vector<TrainTarget> targets;
  for (const auto& s : ds.samples) targets.push_back(target_from(s));
  const auto cfg = small_config();
  Trainer full(targets, small_model(), StepConfig{}, cfg);
  for (int i = 0; i < 3; ++i) full.run_epoch();
  Trainer resumed(targets, full.state());
  while (!full.done()) {
    full.run_epoch();
    resumed.run_epoch();
  }
  CHECK(full.state() == resumed.state());
}

TEST_CASE("a diverging epoch throws and leaves the state untouched") {
  const auto ds = synth_generate(15, 1, 2, 12, 12);
  std::vector<TrainTarget> targets;
  for (const auto& s : ds.samples) targets.push_back(target_from(s));
  Trainer ok(targets, small_model(), StepConfig{}, small_config());
  ok.run_epoch();
  auto state = ok.state();
  for (auto& w : state.params.w2) w = std::numeric_limits<float>::quiet_NaN();
  Trainer bad(targets, state);
  CHECK_THROWS_AS(bad.run_epoch(), TrainingDiverged);
  // NaN never compares equal, so compare everything but the poisoned tensor.
  CHECK(bad.state().epoch == state.epoch);
  CHECK(bad.state().rng == state.rng);
  CHECK(bad.state().pool == state.pool);
  CHECK(bad.state().adam == state.adam);
  CHECK(bad.state().params.w1 == state.params.w1);
}

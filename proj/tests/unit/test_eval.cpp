#include <algorithm>
#include <set>
#include <utility>

#include "doctest.h"
#include "helpers.hpp"
#include "nca/eval.hpp"

using namespace nca;

namespace {

const ChannelLayout kLayout;
const int kDp = 8 * kLayout.n;

using Pair = std::pair<int, int>;  // (cell index, class)

// |T n P| / |P| with explicit sets.
double accuracy_oracle(const CellGrid& g, const TrainTarget& t, double threshold) {
  std::set<Pair> predicted;
  std::set<Pair> truth;
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) {
      const int index = r * g.width() + c;
      if (t.alive(r, c)) truth.insert({index, t.cls(r, c)});
      if (!t.legality(r, c) || !(g.alpha(r, c) > threshold)) continue;
      int best = 0;
      for (int j = 1; j < kLayout.k; ++j)
        if (g.at(r, c, j) > g.at(r, c, best)) best = j;
      predicted.insert({index, best});
    }
  if (predicted.empty()) return 0;
  std::vector<Pair> both;
  std::set_intersection(predicted.begin(), predicted.end(), truth.begin(), truth.end(), std::back_inserter(both));
  return double(both.size()) / double(predicted.size());
}

TrainTarget target_from(const MapSample& s) { return TrainTarget::from_sample(s, kLayout.k); }

// 10 x 12 map, every cell a road of class (r + c) % 4.
MapSample full_road_sample() {
  MapSample s(10, 12);
  s.location = "grid";
  s.timestamp = "t0";
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 12; ++c) s.set_cls(r, c, std::int8_t((r + c) % 4));
  return s;
}

void predict(CellGrid& g, int r, int c, int cls) {
  for (int j = 0; j < kLayout.k; ++j) g.at(r, c, j) = j == cls ? 3.0f : 0.0f;
  g.at(r, c, kLayout.alpha_index()) = 1.0f;
}

ModelConfig model_with(int hidden) {
  ModelConfig m;
  m.hidden_dim = hidden;
  return m;
}

}  // namespace

TEST_CASE("accuracy examples") {
  const auto t = target_from(full_road_sample());

  SUBCASE("perfect prediction") {
    CellGrid g(10, 12, kLayout);
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 12; ++c) predict(g, r, c, t.cls(r, c));
    CHECK(accuracy(g, t, 0.1) == 1.0);
  }
  SUBCASE("alive everywhere with every class wrong") {
    CellGrid g(10, 12, kLayout);
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 12; ++c) predict(g, r, c, (t.cls(r, c) + 1) % 4);
    CHECK(accuracy(g, t, 0.1) == 0.0);
  }
  SUBCASE("100 predicted cells, 80 right") {
    CellGrid g(10, 12, kLayout);
    int placed = 0;
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 10; ++c, ++placed) predict(g, r, c, placed < 80 ? t.cls(r, c) : (t.cls(r, c) + 2) % 4);
    CHECK(accuracy_oracle(g, t, 0.1) == 0.8);
    CHECK(accuracy(g, t, 0.1) == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("nothing predicted") { CHECK(accuracy(CellGrid(10, 12, kLayout), t, 0.1) == 0.0); }
  SUBCASE("alpha at the threshold does not count") {
    CellGrid g(10, 12, kLayout);
    predict(g, 0, 0, t.cls(0, 0));
    predict(g, 0, 1, (t.cls(0, 1) + 1) % 4);
    g.at(0, 1, kLayout.alpha_index()) = 0.1f;
    CHECK(accuracy(g, t, 0.1f) == 1.0);
  }
  SUBCASE("exclusion removes cells from both sets") {
    CellGrid g(10, 12, kLayout);
    predict(g, 0, 0, t.cls(0, 0));
    predict(g, 0, 1, (t.cls(0, 1) + 1) % 4);
    BoolGrid ex(10, 12);
    ex.set(0, 1, true);
    CHECK(accuracy(g, t, 0.1, &ex) == 1.0);
    CHECK(accuracy(g, t, 0.1) == 0.5);
  }
}

TEST_CASE("accuracy matches the set oracle on random instances") {
  Rng rng(1);
  const auto ds = synth_generate(2, 2, 4, 8, 8);
  for (const auto& s : ds.samples) {
    const auto t = target_from(s);
    for (int rep = 0; rep < 10; ++rep) {
      const auto g = testing::random_grid<float>(rng, 8, 8, kLayout, -1, 1);
      const double a = accuracy(g, t, 0.1);
      CHECK(a == accuracy_oracle(g, t, 0.1));
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
      // Permuting hidden channels changes nothing.
      auto p = g;
      for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
          std::reverse(p.cell(r, c).begin() + kLayout.hidden_begin(), p.cell(r, c).end());
      CHECK(accuracy(p, t, 0.1) == a);
    }
  }
}

TEST_CASE("majority class and baseline") {
  MapSample a(1, 4);
  a.set_cls(0, 0, 2);
  a.set_cls(0, 1, 2);
  a.set_cls(0, 2, 1);
  MapSample b(1, 4);
  b.set_cls(0, 0, 1);
  b.set_cls(0, 3, 0);
  CHECK(majority_class({&a, &b}, 4) == 1);  // tie between 1 and 2 goes low
  CHECK(majority_class({&a}, 4) == 2);
  const auto t = target_from(a);
  CHECK(baseline_accuracy(t, 2) == doctest::Approx(2.0 / 3));
  CHECK(baseline_accuracy(t, 3) == 0.0);
  BoolGrid ex(1, 4);
  ex.set(0, 2, true);
  CHECK(baseline_accuracy(t, 2, &ex) == 1.0);
}

TEST_CASE("percentile") {
  CHECK(percentile({3, 1, 2}, 0.5) == 2);
  CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(percentile({5}, 0.95) == 5);
  CHECK(percentile({0, 10}, 0.95) == doctest::Approx(9.5));
  CHECK_THROWS_AS(percentile({}, 0.5), ContractViolation);
}

TEST_CASE("untrained rollouts stay inside the forced disc") {
  const auto ds = synth_generate(3, 1, 1, 24, 24);
  const auto t = target_from(ds.samples[0]);
  const auto params = ModelParams::zeros(kDp, 8, kLayout.n);
  const StepConfig step;
  Rng rng(4);
  const Disc disc = sample_disc_placement(rng, 24, 24, 0.5);
  const BoolGrid mask = disc.mask(24, 24);
  const auto traj = run(grow_state(t, disc, kLayout), params, step, t.legality,
                        std::make_unique<InductionField>(make_induction(t, disc, kLayout.k)).get(), rng, 16);
  int alive = 0;
  int match = 0;
  for (int r = 0; r < 24; ++r)
    for (int c = 0; c < 24; ++c) {
      const bool in_disc = mask(r, c) && t.legality(r, c);
      CHECK((traj.final.alpha(r, c) > 0.1f) == in_disc);
      if (!in_disc) continue;
      ++alive;
      const auto cell = traj.final.cell(r, c);
      match += int(std::max_element(cell.begin(), cell.begin() + 4) - cell.begin()) == t.cls(r, c);
    }
  REQUIRE(alive > 0);
  CHECK(accuracy(traj.final, t, 0.1) == double(match) / alive);
  CHECK(match == alive);

  EvalConfig cfg;
  cfg.trials = 3;
  cfg.steps = 16;
  const auto report = evaluate(params, model_with(8), step, {&ds.samples[0]}, cfg, 0);
  CHECK(report.overall == 1.0);
  cfg.exclude_pre_explored = true;
  CHECK(evaluate(params, model_with(8), step, {&ds.samples[0]}, cfg, 0).overall == 0.0);
}

TEST_CASE("evaluate: determinism, aggregation and duplication") {
  const auto ds = synth_generate(5, 2, 3, 16, 16);
  Rng rng(6);
  const auto params = testing::random_params<float>(rng, kDp, 8, kLayout.n, 0.3);
  const StepConfig step;
  EvalConfig cfg;
  cfg.trials = 2;
  cfg.steps = 8;
  cfg.seed = 9;
  cfg.exclude_pre_explored = true;
  std::vector<const MapSample*> samples;
  for (const auto& s : ds.samples) samples.push_back(&s);

  const auto a = evaluate(params, model_with(8), step, samples, cfg, 0, 1);
  const auto b = evaluate(params, model_with(8), step, samples, cfg, 0, 4);
  CHECK(a.to_json() == b.to_json());
  REQUIRE(a.locations.size() == 2);
  CHECK(a.samples.size() == 6);
  CHECK(a.overall > 0.0);
  CHECK(a.overall < 1.0);

  double sum = 0;
  for (const auto& l : a.locations) {
    double m = 0;
    for (const auto& s : a.samples)
      if (s.location == l.location) m += s.accuracy;
    CHECK(l.mean == doctest::Approx(m / 3));
    sum += l.mean;
  }
  CHECK(a.overall == doctest::Approx(sum / 2));

  // Duplicating one location's samples leaves its mean and the overall mean alone.
  auto dup = samples;
  for (const auto* s : samples)
    if (s->location == "loc01") dup.push_back(s);
  const auto d = evaluate(params, model_with(8), step, dup, cfg, 0, 2);
  CHECK(d.overall == doctest::Approx(a.overall).epsilon(1e-12));
  CHECK(d.locations[1].samples == 6);

  // Sample order does not matter either.
  std::vector<const MapSample*> reversed(samples.rbegin(), samples.rend());
  const auto rev = evaluate(params, model_with(8), step, reversed, cfg, 0, 2);
  CHECK(rev.overall == doctest::Approx(a.overall).epsilon(1e-12));

  cfg.seed = 10;
  CHECK(evaluate(params, model_with(8), step, samples, cfg, 0).to_json() != a.to_json());

  const auto j = a.to_json();
  CHECK(j.at("trials") == 2);
  CHECK(j.at("locations").size() == 2);
  const auto table = a.table();
  CHECK(table.find("loc00") != std::string::npos);
  CHECK(table.find("overall") != std::string::npos);
}

TEST_CASE("regeneration trial") {
  const auto ds = synth_generate(7, 1, 1, 16, 16);
  const auto t = target_from(ds.samples[0]);
  Rng rng(8);
  const auto params = testing::random_params<float>(rng, kDp, 8, kLayout.n, 0.05);
  const auto none = regeneration_trial(params, model_with(8), StepConfig{}, t, 8, 0.0, 8, 0.5, 3);
  CHECK(none.regenerated == none.undamaged);
  const auto a = regeneration_trial(params, model_with(8), StepConfig{}, t, 8, 4.0, 8, 0.5, 3);
  const auto b = regeneration_trial(params, model_with(8), StepConfig{}, t, 8, 4.0, 8, 0.5, 3);
  CHECK(a.regenerated == b.regenerated);
  CHECK(a.undamaged == none.undamaged);
  CHECK(t.legality(int(a.damage_row), int(a.damage_col)));
}

TEST_CASE("frame export") {
  const auto ds = synth_generate(11, 1, 1, 20, 20);
  const auto t = target_from(ds.samples[0]);
  const auto& legend = ds.manifest.legend;
  Rng rng(12);
  const auto params = testing::random_params<float>(rng, kDp, 8, kLayout.n, 0.05);
  const Disc disc = sample_disc_placement(rng, 20, 20, 0.5);
  const auto field = make_induction(t, disc, kLayout.k);
  const int steps = 40;
  const auto traj = run(grow_state(t, disc, kLayout), params, StepConfig{}, t.legality, &field, rng, steps, 1);

  for (int stride : {1, 3, 7, 16, 40}) {
    testing::TempDir dir("frames");
    const auto files = export_frames(traj, t.legality, legend, 0.1, stride, dir.path());
    CHECK(int(files.size()) == steps / stride + 1);
    CHECK(files.front().filename() == "frame_0000.ppm");
    for (const auto& f : files) CHECK(std::filesystem::exists(f));
  }

  testing::TempDir dir("frames0");
  const auto files = export_frames(traj, t.legality, legend, 0.1, steps, dir.path());
  REQUIRE(files.size() == 2);
  CHECK(files.back().filename() == "frame_0040.ppm");
  const Image first = read_ppm(files.front());
  const BoolGrid mask = disc.mask(20, 20);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 20; ++c) {
      const Rgb p = first.pixel(r, c);
      if (!t.legality(r, c)) {
        CHECK(p == legend.background);
      } else {
        CHECK((p != legend.dead) == mask(r, c));
      }
    }
  CHECK_THROWS_AS(export_frames(traj, t.legality, legend, 0.1, 0, dir.path()), ContractViolation);
}

#include "nca/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "nca/parallel.hpp"

namespace nca {

using nlohmann::json;

namespace {

// Trial streams are keyed by sample identity (FNV-1a of "location/timestamp"),
// so results do not depend on where a sample sits in the list.
std::uint64_t sample_key(const TrainTarget& target) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char ch : target.location + "/" + target.timestamp) {
    h ^= std::uint8_t(ch);
    h *= 0x100000001b3ull;
  }
  return h;
}

int argmax_logit(std::span<const float> cell, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (cell[std::size_t(j)] > cell[std::size_t(best)]) best = j;
  return best;
}

}  // namespace

double accuracy(const CellGrid& final, const TrainTarget& target, double alive_threshold,
                const BoolGrid* exclude) {
  const int h = final.height();
  const int w = final.width();
  const int k = final.layout().k;
  require(target.legality.matches(final) && target.alive.matches(final) && target.class_probs.depth() == k,
          "accuracy: target does not match the grid");
  if (exclude) require(exclude->matches(final), "accuracy: exclusion mask shape mismatch");
  const int alpha = final.layout().alpha_index();

  std::int64_t predicted = 0;
  std::int64_t hits = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!target.legality(r, c) || (exclude && (*exclude)(r, c))) continue;
      if (!(double(final.at(r, c, alpha)) > alive_threshold)) continue;
      ++predicted;
      if (target.alive(r, c) && argmax_logit(final.cell(r, c), k) == target.cls(r, c)) ++hits;
    }
  }
  return predicted == 0 ? 0.0 : double(hits) / double(predicted);
}

void EvalConfig::validate() const {
  require(trials >= 1, "eval: trials must be >= 1");
  require(steps >= 0, "eval: steps must be >= 0");
  require(diameter_ratio > 0 && diameter_ratio <= 1, "eval: diameter_ratio must be in (0, 1]");
  require(timing_runs >= 0, "eval: timing_runs must be >= 0");
}

json TimingStats::to_json() const {
  return {{"runs", runs},
          {"steps", steps},
          {"median_seconds", median_seconds},
          {"p95_seconds", p95_seconds},
          {"mean_seconds", mean_seconds}};
}

json EvalReport::to_json() const {
  json j;
  j["schema"] = "nca-eval-report";
  j["version"] = 1;
  j["trials"] = trials;
  j["steps"] = steps;
  j["exclude_pre_explored"] = exclude_pre_explored;
  j["majority_class"] = majority_class;
  json s = json::array();
  for (const auto& r : samples)
    s.push_back({{"location", r.location},
                 {"timestamp", r.timestamp},
                 {"accuracy", r.accuracy},
                 {"baseline", r.baseline}});
  j["samples"] = s;
  json l = json::array();
  for (const auto& r : locations)
    l.push_back({{"location", r.location},
                 {"samples", r.samples},
                 {"mean", r.mean},
                 {"baseline_mean", r.baseline_mean}});
  j["locations"] = l;
  j["overall"] = overall;
  j["overall_baseline"] = overall_baseline;
  j["timing"] = timing ? timing->to_json() : json(nullptr);
  return j;
}

std::string EvalReport::table() const {
  std::size_t width = std::string("overall").size();
  for (const auto& l : locations) width = std::max(width, l.location.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %8s %10s %10s\n", int(width), "location", "samples", "accuracy",
                "baseline");
  out << line;
  for (const auto& l : locations) {
    std::snprintf(line, sizeof line, "%-*s %8d %9.2f%% %9.2f%%\n", int(width), l.location.c_str(), l.samples,
                  100 * l.mean, 100 * l.baseline_mean);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-*s %8zu %9.2f%% %9.2f%%\n", int(width), "overall", samples.size(),
                100 * overall, 100 * overall_baseline);
  out << line;
  if (timing) {
    std::snprintf(line, sizeof line, "rollout (%d steps, %d runs): median %.4f s, p95 %.4f s\n", timing->steps,
                  timing->runs, timing->median_seconds, timing->p95_seconds);
    out << line;
  }
  return out.str();
}

int majority_class(const std::vector<const MapSample*>& samples, int k) {
  std::vector<std::int64_t> counts(std::size_t(k), 0);
  for (const MapSample* s : samples)
    for (auto c : s->classes)
      if (c >= 0 && c < k) ++counts[std::size_t(c)];
  return int(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

double baseline_accuracy(const TrainTarget& target, int cls, const BoolGrid* exclude) {
  std::int64_t predicted = 0;
  std::int64_t hits = 0;
  for (int r = 0; r < target.height(); ++r) {
    for (int c = 0; c < target.width(); ++c) {
      if (!target.legality(r, c) || !target.alive(r, c) || (exclude && (*exclude)(r, c))) continue;
      ++predicted;
      if (target.cls(r, c) == cls) ++hits;
    }
  }
  return predicted == 0 ? 0.0 : double(hits) / double(predicted);
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& model, const StepConfig& step,
                    const std::vector<const MapSample*>& samples, const EvalConfig& cfg, int majority, int threads) {
  cfg.validate();
  step.validate();
  require(!samples.empty(), "eval: no samples to evaluate");
  require(majority >= 0 && majority < model.layout.k, "eval: majority class outside the legend");

  std::vector<TrainTarget> targets;
  for (const MapSample* s : samples) targets.push_back(TrainTarget::from_sample(*s, model.layout.k));

  const int trials = cfg.trials;
  std::vector<double> acc(targets.size() * std::size_t(trials));
  std::vector<double> base(acc.size());
  parallel_for(int(acc.size()), threads, [&](int job) {
    const int s = job / trials;
    const int t = job % trials;
    const TrainTarget& target = targets[std::size_t(s)];
    Rng rng(derive_seed(cfg.seed, sample_key(target), std::uint64_t(t)));
    const Disc disc = sample_disc_placement(rng, target.height(), target.width(), cfg.diameter_ratio);
    const CellGrid start = grow_state(target, disc, model.layout);
    const InductionField field = make_induction(target, disc, model.layout.k);
    const auto trajectory = run(start, params, step, target.legality, &field, rng, cfg.steps);
    const BoolGrid mask = disc.mask(target.height(), target.width());
    const BoolGrid* exclude = cfg.exclude_pre_explored ? &mask : nullptr;
    acc[std::size_t(job)] = accuracy(trajectory.final, target, step.alive_threshold, exclude);
    base[std::size_t(job)] = baseline_accuracy(target, majority, exclude);
  });

  EvalReport report;
  report.trials = trials;
  report.steps = cfg.steps;
  report.exclude_pre_explored = cfg.exclude_pre_explored;
  report.majority_class = majority;
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_location;
  for (std::size_t s = 0; s < targets.size(); ++s) {
    SampleResult r;
    r.location = targets[s].location;
    r.timestamp = targets[s].timestamp;
    for (int t = 0; t < trials; ++t) {
      r.accuracy += acc[s * std::size_t(trials) + std::size_t(t)];
      r.baseline += base[s * std::size_t(trials) + std::size_t(t)];
    }
    r.accuracy /= trials;
    r.baseline /= trials;
    if (!by_location.count(r.location)) order.push_back(r.location);
    by_location[r.location].push_back(s);
    report.samples.push_back(r);
  }
  for (const auto& id : order) {
    LocationResult l;
    l.location = id;
    for (std::size_t s : by_location[id]) {
      l.mean += report.samples[s].accuracy;
      l.baseline_mean += report.samples[s].baseline;
    }
    l.samples = int(by_location[id].size());
    l.mean /= l.samples;
    l.baseline_mean /= l.samples;
    report.overall += l.mean;
    report.overall_baseline += l.baseline_mean;
    report.locations.push_back(l);
  }
  report.overall /= double(report.locations.size());
  report.overall_baseline /= double(report.locations.size());

  if (cfg.timing_runs > 0)
    report.timing = time_rollouts(params, model, step, targets.front(), cfg.steps, cfg.timing_runs, cfg.seed);
  return report;
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), "percentile: no values");
  require(q >= 0 && q <= 1, "percentile: q must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

RegenerationTrial regeneration_trial(const ModelParams& params, const ModelConfig& model, const StepConfig& step,
                                     const TrainTarget& target, int steps, double radius, int recover,
                                     double diameter_ratio, std::uint64_t seed) {
  require(steps >= 0 && recover >= 0 && radius >= 0, "regeneration: negative steps or radius");
  const int h = target.height();
  const int w = target.width();
  std::vector<int> legal;
  for (int i = 0; i < h * w; ++i)
    if (target.legality(i / w, i % w)) legal.push_back(i);
  require(!legal.empty(), "regeneration: map has no legal cell");

  Rng rng(seed);
  const Disc disc = sample_disc_placement(rng, h, w, diameter_ratio);
  const InductionField field = make_induction(target, disc, model.layout.k);
  const CellGrid grown = run(grow_state(target, disc, model.layout), params, step, target.legality, &field, rng, steps).final;

  RegenerationTrial out;
  const int at = legal[std::size_t(uniform_index(rng, legal.size()))];
  out.damage_row = at / w;
  out.damage_col = at % w;
  CellGrid damaged = grown;
  apply_damage(damaged, out.damage_row, out.damage_col, radius);

  Rng rng_undamaged = rng;
  const CellGrid a = run(grown, params, step, target.legality, &field, rng_undamaged, recover).final;
  const CellGrid b = run(damaged, params, step, target.legality, &field, rng, recover).final;
  out.undamaged = accuracy(a, target, step.alive_threshold);
  out.regenerated = accuracy(b, target, step.alive_threshold);
  return out;
}

TimingStats time_rollouts(const ModelParams& params, const ModelConfig& model, const StepConfig& step,
                          const TrainTarget& target, int steps, int runs, std::uint64_t seed) {
  require(runs >= 1, "timing: runs must be >= 1");
  std::vector<double> seconds;
  for (int i = -1; i < runs; ++i) {
    Rng rng(derive_seed(seed, 0x71e, std::uint64_t(i + 1)));
    const Disc disc = sample_disc_placement(rng, target.height(), target.width(), 0.5);
    const CellGrid start = grow_state(target, disc, model.layout);
    const InductionField field = make_induction(target, disc, model.layout.k);
    const auto t0 = std::chrono::steady_clock::now();
    const auto trajectory = run(start, params, step, target.legality, &field, rng, steps);
    const auto t1 = std::chrono::steady_clock::now();
    if (i >= 0) seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  TimingStats stats;
  stats.runs = runs;
  stats.steps = steps;
  stats.median_seconds = percentile(seconds, 0.5);
  stats.p95_seconds = percentile(seconds, 0.95);
  for (double s : seconds) stats.mean_seconds += s;
  stats.mean_seconds /= runs;
  return stats;
}

std::vector<std::filesystem::path> export_frames(const Trajectory<float>& trajectory, const BoolGrid& legality,
                                                 const ClassLegend& legend, double alive_threshold, int stride,
                                                 const std::filesystem::path& dir) {
  require(stride >= 1, "export_frames: stride must be >= 1");
  std::filesystem::create_directories(dir);
  int last = 0;
  for (int s : trajectory.snapshot_steps) last = std::max(last, s);
  const int digits = std::max(4, int(std::to_string(last).size()));
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < trajectory.snapshots.size(); ++i) {
    const int s = trajectory.snapshot_steps[i];
    if (s % stride != 0) continue;
    char name[64];
    std::snprintf(name, sizeof name, "frame_%0*d.ppm", digits, s);
    const auto path = dir / name;
    write_ppm(path, encode_prediction(trajectory.snapshots[i], legality, legend, alive_threshold));
    written.push_back(path);
  }
  return written;
}

}  // namespace nca

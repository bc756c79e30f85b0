#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "nca/trainer.hpp"

namespace nca {

/// |T n P| / |P| over (cell, label) pairs. P holds legal cells with
/// alpha > alive_threshold labelled by their argmax logit; T holds
/// ground-truth alive cells with their true class. Cells flagged in
/// `exclude` are left out of both sets. Returns 0 when P is empty.
double accuracy(const CellGrid& final, const TrainTarget& target, double alive_threshold,
                const BoolGrid* exclude = nullptr);

struct EvalConfig {
  int trials = 10;
  int steps = 128;
  double diameter_ratio = 0.5;
  bool exclude_pre_explored = false;  ///< score only cells outside the induction disc
  std::uint64_t seed = 0;
  int timing_runs = 0;  ///< extra timed rollouts on the first sample (0 = skip)

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

struct SampleResult {
  std::string location;
  std::string timestamp;
  double accuracy = 0;  ///< mean over trials
  double baseline = 0;  ///< majority-class predictor on the same cells
};

struct LocationResult {
  std::string location;
  int samples = 0;
  double mean = 0;
  double baseline_mean = 0;
};

struct TimingStats {
  int runs = 0;
  int steps = 0;
  double median_seconds = 0;
  double p95_seconds = 0;
  double mean_seconds = 0;

  nlohmann::json to_json() const;
};

struct EvalReport {
  int trials = 0;
  int steps = 0;
  bool exclude_pre_explored = false;
  int majority_class = 0;
  std::vector<SampleResult> samples;
  std::vector<LocationResult> locations;
  double overall = 0;           ///< unweighted mean of location means
  double overall_baseline = 0;
  std::optional<TimingStats> timing;

  nlohmann::json to_json() const;
  /// Aligned columns: one row per location plus the overall mean.
  std::string table() const;
};

/// Most frequent class over alive cells of `samples` (ties to the lower class).
int majority_class(const std::vector<const MapSample*>& samples, int k);

/// Accuracy of predicting `cls` on every ground-truth alive cell (same
/// exclusion rule as accuracy()).
double baseline_accuracy(const TrainTarget& target, int cls, const BoolGrid* exclude = nullptr);

/// Grow-mode rollouts from fresh random discs, `trials` per sample.
/// Deterministic in cfg.seed for any thread count.
EvalReport evaluate(const ModelParams& params, const ModelConfig& model, const StepConfig& step,
                    const std::vector<const MapSample*>& samples, const EvalConfig& cfg, int majority, int threads = 1);

struct RegenerationTrial {
  double undamaged = 0;    ///< accuracy after grow + recovery steps, no damage
  double regenerated = 0;  ///< same, with the damage applied before recovery
  double damage_row = 0;
  double damage_col = 0;
};

/// Grows `steps` steps from a random disc, then continues `recover` steps
/// twice from that state: untouched, and after zeroing a disc of `radius`
/// around a uniformly drawn legal cell. Both continuations share one random
/// stream, so they differ only by the damage.
RegenerationTrial regeneration_trial(const ModelParams& params, const ModelConfig& model, const StepConfig& step,
                                     const TrainTarget& target, int steps, double radius, int recover,
                                     double diameter_ratio, std::uint64_t seed);

/// Wall time of `runs` rollouts of `steps` steps from a grow start on `target`.
TimingStats time_rollouts(const ModelParams& params, const ModelConfig& model, const StepConfig& step,
                          const TrainTarget& target, int steps, int runs, std::uint64_t seed);

/// Percentile by linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

/// frame_<step>.ppm for every snapshot whose step is a multiple of `stride`.
/// Step numbers are zero-padded to max(4, digits of the last step).
std::vector<std::filesystem::path> export_frames(const Trajectory<float>& trajectory, const BoolGrid& legality,
                                                 const ClassLegend& legend, double alive_threshold, int stride,
                                                 const std::filesystem::path& dir);

}  // namespace nca

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "nca/ca_step.hpp"
#include "nca/data_io.hpp"

namespace nca {

/// Ground truth for one map: one-hot class distributions, which cells
/// should end up alive (road cells) and where cells may live at all.
struct TrainTarget {
  std::string location;
  std::string timestamp;
  Field class_probs;  ///< H x W x k
  BoolGrid alive;
  BoolGrid legality;

  int height() const { return legality.height(); }
  int width() const { return legality.width(); }
  int cls(int r, int c) const;  ///< argmax of class_probs; -1 where not alive

  static TrainTarget from_sample(const MapSample& sample, int k);
};

struct LossResult {
  double total = 0;
  std::vector<double> per_cell;  ///< row-major, zero off legality
};

/// sum over legal cells of alive * KL(p || softmax(logits)) + (alpha - alive)^2.
template <typename Real>
LossResult loss(const BasicCellGrid<Real>& final, const TrainTarget& target);

/// d(loss)/d(final grid).
template <typename Real>
BasicField<Real> loss_gradient(const BasicCellGrid<Real>& final, const TrainTarget& target);

/// Reverse-mode gradient of the loss at the end of a recorded rollout.
/// Masks are constants of the rollout and the induction forcing is
/// detached; relu'(0) = 0.
template <typename Real>
BasicModelParams<Real> backward(const Tape<Real>& tape, const BasicCellGrid<Real>& final, const TrainTarget& target,
                                const BasicModelParams<Real>& params, const StepConfig& cfg, const BoolGrid& legality,
                                const FilterBank& bank = standard_filter_bank());

/// Bias-corrected Adam. Moments are kept in double. b2 is never updated.
struct AdamState {
  std::vector<double> m_w1, m_b1, m_w2;
  std::vector<double> v_w1, v_b1, v_w2;
  std::uint64_t step = 0;
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ModelParams& params, double lr);
  bool operator==(const AdamState&) const = default;
};

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state);

/// Scales each gradient tensor to unit L2 norm (tensors with zero norm stay zero).
void normalize_per_layer(ModelParams& grads);

enum class Task : std::uint8_t { grow = 0, persist = 1, regenerate = 2, transform = 3 };
std::string to_string(Task task);

struct TaskMix {
  double grow = 0.25;
  double persist = 0.35;
  double regenerate = 0.25;
  double transform = 0.15;

  std::array<double, 4> weights() const { return {grow, persist, regenerate, transform}; }
  bool operator==(const TaskMix&) const = default;
};

struct ModelConfig {
  ChannelLayout layout;
  int hidden_dim = 128;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  int steps = 128;
  int batch_size = 8;
  long epochs = 50000;
  double lr = 2e-3;
  double lr_decay_at = 0.7;  ///< fraction of epochs after which lr is scaled
  double lr_decay_factor = 0.1;
  int pool_size = 256;
  TaskMix task_mix;
  double damage_radius_min = 3.0;
  double damage_radius_max = 10.0;
  double diameter_ratio = 0.5;
  bool normalize_gradients = true;
  long checkpoint_every = 500;
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(long epoch) const;
  bool operator==(const TrainConfig&) const = default;
};

struct PoolEntry {
  CellGrid state;  ///< empty until the entry has been rolled out once
  int target = 0;
  Task task = Task::grow;
  std::uint64_t age = 0;
  Disc disc;

  bool seeded() const { return state.height() > 0; }
  bool operator==(const PoolEntry&) const = default;
};

struct RolloutStart {
  Task task = Task::grow;  ///< the task actually set up (after degenerate cases)
  CellGrid grid;
  InductionField field;
  Disc disc;
};

/// Induction field with one-hot targets on disc cells that are legal.
InductionField make_induction(const TrainTarget& target, const Disc& disc, int k);

/// Grow-mode start: everything dead except legal disc cells (alpha = 1,
/// hidden = 1, logits 0).
CellGrid grow_state(const TrainTarget& target, const Disc& disc, ChannelLayout layout);

/// Zeroes every channel of cells strictly closer than `radius` to the center.
void apply_damage(CellGrid& grid, double center_r, double center_c, double radius);

/// Builds the state a rollout starts from. For transform, `target_index`
/// names the new target; if it equals the entry's target the task behaves
/// like persist.
RolloutStart make_rollout_start(const PoolEntry& entry, Task task, int target_index, const TrainTarget& target,
                                const TrainConfig& cfg, ChannelLayout layout, Rng& rng);

struct EpochLog {
  long epoch = 0;
  double loss = 0;
  double lr = 0;
  std::array<int, 4> tasks{};
  std::array<double, 4> task_accuracy{};  ///< mean final accuracy per task; NaN if the task was not drawn
  double wall_seconds = 0;

  nlohmann::json to_json() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to continue training bit-for-bit.
struct TrainerState {
  ModelConfig model;
  StepConfig step;
  TrainConfig train;
  ModelParams params;
  AdamState adam;
  long epoch = 0;
  Rng rng;
  std::vector<PoolEntry> pool;

  bool operator==(const TrainerState&) const = default;
};

/// Pool-based BPTT training loop over a fixed set of targets.
class Trainer {
 public:
  Trainer(std::vector<TrainTarget> targets, ModelConfig model, StepConfig step, TrainConfig train);
  Trainer(std::vector<TrainTarget> targets, TrainerState state);

  /// One optimizer update on one batch. Throws TrainingDiverged (state
  /// untouched) if the batch loss is not finite.
  EpochLog run_epoch(int threads = 1);

  bool done() const { return state_.epoch >= state_.train.epochs; }
  const TrainerState& state() const { return state_; }
  const ModelParams& params() const { return state_.params; }
  const std::vector<TrainTarget>& targets() const { return targets_; }

 private:
  void check_targets() const;

  std::vector<TrainTarget> targets_;
  TrainerState state_;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

/// Runs every remaining epoch; `on_epoch` sees the trainer after each update.
TrainResult train(const std::vector<const MapSample*>& dataset, const ModelConfig& model, const StepConfig& step,
                  const TrainConfig& cfg, int threads = 1,
                  const std::function<void(const Trainer&, const EpochLog&)>& on_epoch = {});

}  // namespace nca

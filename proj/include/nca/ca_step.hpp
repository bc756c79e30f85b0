#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nca/grid.hpp"
#include "nca/perception.hpp"
#include "nca/rng.hpp"

namespace nca {

/// Two dense layers shared by every cell:
///   delta = w2^T relu(w1^T v + b1) + b2
/// w1 is input_dim x hidden_dim and w2 is hidden_dim x output_dim, both
/// row-major. b2 stays at zero.
template <typename Real>
struct BasicModelParams {
  int input_dim = 0;
  int hidden_dim = 0;
  int output_dim = 0;
  std::vector<Real> w1;
  std::vector<Real> b1;
  std::vector<Real> w2;
  std::vector<Real> b2;

  static BasicModelParams zeros(int input_dim, int hidden_dim, int output_dim) {
    BasicModelParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.output_dim = output_dim;
    p.w1.assign(std::size_t(input_dim) * std::size_t(hidden_dim), Real(0));
    p.b1.assign(std::size_t(hidden_dim), Real(0));
    p.w2.assign(std::size_t(hidden_dim) * std::size_t(output_dim), Real(0));
    p.b2.assign(std::size_t(output_dim), Real(0));
    return p;
  }

  /// Glorot-uniform first layer, zero output layer.
  static BasicModelParams initial(int input_dim, int hidden_dim, int output_dim, Rng& rng) {
    auto p = zeros(input_dim, hidden_dim, output_dim);
    const double limit = std::sqrt(6.0 / double(input_dim + hidden_dim));
    for (auto& w : p.w1) w = static_cast<Real>(uniform(rng, -limit, limit));
    return p;
  }

  bool same_shape(const BasicModelParams& o) const {
    return input_dim == o.input_dim && hidden_dim == o.hidden_dim && output_dim == o.output_dim &&
           w1.size() == o.w1.size() && b1.size() == o.b1.size() && w2.size() == o.w2.size() &&
           b2.size() == o.b2.size();
  }

  bool all_finite() const {
    for (const auto* t : {&w1, &b1, &w2, &b2})
      for (Real v : *t)
        if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename Other>
  BasicModelParams<Other> cast() const {
    BasicModelParams<Other> out;
    out.input_dim = input_dim;
    out.hidden_dim = hidden_dim;
    out.output_dim = output_dim;
    out.w1.assign(w1.begin(), w1.end());
    out.b1.assign(b1.begin(), b1.end());
    out.w2.assign(w2.begin(), w2.end());
    out.b2.assign(b2.begin(), b2.end());
    return out;
  }

  bool operator==(const BasicModelParams&) const = default;
};

using ModelParams = BasicModelParams<float>;

enum class InductionMode { paper_formula, exact_kl_gradient };

std::string to_string(InductionMode mode);
InductionMode induction_mode_from_string(const std::string& name);

struct StepConfig {
  double beta = 1.0;
  double concentration = 2.0;
  double stochastic_p = 0.5;
  double alive_threshold = 0.1;
  int alive_window = 3;
  InductionMode induction_mode = InductionMode::paper_formula;

  void validate() const;
  bool operator==(const StepConfig&) const = default;
};

/// Pre-explored region with per-cell target distributions. `concentration`
/// is either empty (every region cell uses StepConfig::concentration) or one
/// value per cell.
struct InductionField {
  BoolGrid region;
  Field targets;
  std::vector<float> concentration;

  InductionField() = default;
  InductionField(int height, int width, int k) : region(height, width), targets(height, width, k) {}

  int height() const { return region.height(); }
  int width() const { return region.width(); }
  bool empty() const { return region.count() == 0; }

  /// Installs target distribution `p` at (r, c).
  void set(int r, int c, std::span<const float> p, std::optional<float> strength = std::nullopt);
  void clear(int r, int c);
  void validate(int k) const;
};

/// Update gate: some alpha in the window (legal cells only) exceeds the threshold.
template <typename Real>
BoolGrid alive_mask(const BasicCellGrid<Real>& grid, const StepConfig& cfg, const BoolGrid* legality = nullptr);

/// i.i.d. Bernoulli(p) per cell, drawn in row-major order.
BoolGrid stochastic_mask(Rng& rng, int height, int width, double p);

/// Forward pass of the dense layers for one cell. `hidden_pre` receives the
/// pre-activation (hidden_dim long), `delta` the output (output_dim long).
template <typename Real>
void dense_forward(const BasicModelParams<Real>& params, std::span<const Real> input,
                   std::span<Real> hidden_pre, std::span<Real> delta);

/// Per-cell dense network over a whole perception field (H x W x n).
template <typename Real>
BasicField<Real> compute_delta(const BasicField<Real>& perception, const BasicModelParams<Real>& params);

/// Forcing term for the class logits; zero off-region and on non-class channels.
template <typename Real>
BasicField<Real> induction_delta(const BasicCellGrid<Real>& grid, const InductionField& field, const StepConfig& cfg);

/// Everything a single step consumed that is not a function of the
/// parameters: the update gate and the (detached) induction forcing already
/// scaled by its concentration. Replaying it reproduces the step exactly.
template <typename Real>
struct StepInputs {
  BoolGrid update;
  std::vector<int> forced_cells;  ///< row-major cell indices with forcing
  std::vector<Real> forcing;      ///< k values per forced cell, C * delta_pre
};

/// Draws masks, evaluates the forcing, and records both.
template <typename Real>
StepInputs<Real> prepare_step(const BasicCellGrid<Real>& grid, const StepConfig& cfg, const BoolGrid& legality,
                              const InductionField* field, Rng& rng);

/// Applies x + beta * delta on gated cells, subtracts the forcing, clamps.
template <typename Real>
BasicCellGrid<Real> apply_step(const BasicCellGrid<Real>& grid, const BasicModelParams<Real>& params,
                               const StepConfig& cfg, const BoolGrid& legality, const StepInputs<Real>& inputs,
                               const FilterBank& bank);

/// One synchronous CA update.
template <typename Real>
BasicCellGrid<Real> step(const BasicCellGrid<Real>& grid, const BasicModelParams<Real>& params,
                         const StepConfig& cfg, const BoolGrid& legality, const InductionField* field, Rng& rng,
                         const FilterBank& bank = standard_filter_bank());

/// All zeros except one cell with alpha = 1 and every hidden channel = 1.
template <typename Real = float>
BasicCellGrid<Real> seed_configuration(int height, int width, ChannelLayout layout, int row, int col);

template <typename Real = float>
BasicCellGrid<Real> seed_configuration(int height, int width, ChannelLayout layout, Rng& rng);

/// Recorded rollout: the state entering every step plus the step inputs.
template <typename Real>
struct Tape {
  std::vector<BasicCellGrid<Real>> states;
  std::vector<StepInputs<Real>> inputs;
  int steps() const { return int(inputs.size()); }
};

template <typename Real>
struct Trajectory {
  BasicCellGrid<Real> final;
  std::vector<int> snapshot_steps;
  std::vector<BasicCellGrid<Real>> snapshots;
};

/// T steps. With snapshot_every > 0, the grid is snapshotted at every step
/// index that is a multiple of snapshot_every (step 0 included).
template <typename Real>
Trajectory<Real> run(const BasicCellGrid<Real>& grid, const BasicModelParams<Real>& params, const StepConfig& cfg,
                     const BoolGrid& legality, const InductionField* field, Rng& rng, int steps,
                     int snapshot_every = 0, Tape<Real>* tape = nullptr,
                     const FilterBank& bank = standard_filter_bank());

/// Re-runs a recorded tape's inputs with (possibly different) parameters.
template <typename Real>
BasicCellGrid<Real> replay(const Tape<Real>& tape, const BasicModelParams<Real>& params, const StepConfig& cfg,
                           const BoolGrid& legality, const FilterBank& bank = standard_filter_bank());

/// Cells inside the closed disc of the given center and radius (real-valued).
BoolGrid disc_mask(int height, int width, double center_r, double center_c, double radius, bool closed = true);

}  // namespace nca

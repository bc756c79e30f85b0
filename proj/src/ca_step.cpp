#include "nca/ca_step.hpp"

#include <algorithm>
#include <cmath>

namespace nca {

std::string to_string(InductionMode mode) {
  return mode == InductionMode::paper_formula ? "paper-formula" : "exact-kl-gradient";
}

InductionMode induction_mode_from_string(const std::string& name) {
  if (name == "paper-formula") return InductionMode::paper_formula;
  if (name == "exact-kl-gradient") return InductionMode::exact_kl_gradient;
  throw ContractViolation("unknown induction mode '" + name + "'");
}

void StepConfig::validate() const {
  require(beta > 0 && std::isfinite(beta), "StepConfig: beta must be positive");
  require(concentration >= 0 && std::isfinite(concentration), "StepConfig: concentration must be >= 0");
  require(stochastic_p > 0 && stochastic_p <= 1, "StepConfig: stochastic_p must be in (0, 1]");
  require(alive_threshold > 0 && alive_threshold < 1, "StepConfig: alive_threshold must be in (0, 1)");
  require(alive_window >= 1 && alive_window % 2 == 1, "StepConfig: alive_window must be odd");
}

void InductionField::set(int r, int c, std::span<const float> p, std::optional<float> strength) {
  require(region.in_bounds(r, c), "InductionField::set: cell out of bounds");
  require(int(p.size()) == targets.depth(), "InductionField::set: target length != k");
  region.set(r, c, true);
  std::copy(p.begin(), p.end(), targets.cell(r, c).begin());
  if (strength) {
    if (concentration.empty()) concentration.assign(targets.cells(), -1.0f);
    concentration[std::size_t(r) * std::size_t(width()) + std::size_t(c)] = *strength;
  } else if (!concentration.empty()) {
    concentration[std::size_t(r) * std::size_t(width()) + std::size_t(c)] = -1.0f;
  }
}

void InductionField::clear(int r, int c) {
  require(region.in_bounds(r, c), "InductionField::clear: cell out of bounds");
  region.set(r, c, false);
  auto cell = targets.cell(r, c);
  std::fill(cell.begin(), cell.end(), 0.0f);
}

void InductionField::validate(int k) const {
  require(targets.depth() == k, "InductionField: target depth != k");
  require(targets.height() == region.height() && targets.width() == region.width(),
          "InductionField: region/target shape mismatch");
  require(concentration.empty() || concentration.size() == targets.cells(),
          "InductionField: concentration size mismatch");
  for (int r = 0; r < height(); ++r) {
    for (int c = 0; c < width(); ++c) {
      if (!region(r, c)) continue;
      double total = 0;
      for (float v : targets.cell(r, c)) {
        require(v >= 0 && std::isfinite(v), "InductionField: target not on the simplex");
        total += v;
      }
      require(std::abs(total - 1.0) <= 1e-5, "InductionField: target not on the simplex");
    }
  }
}

template <typename Real>
BoolGrid alive_mask(const BasicCellGrid<Real>& grid, const StepConfig& cfg, const BoolGrid* legality) {
  require(cfg.alive_window >= 1 && cfg.alive_window % 2 == 1, "alive_mask: window must be odd");
  const int h = grid.height();
  const int w = grid.width();
  if (legality) require(legality->matches(grid), "alive_mask: legality shape mismatch");
  const int alpha = grid.layout().alpha_index();
  const Real threshold = static_cast<Real>(cfg.alive_threshold);

  BoolGrid alive_cell(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      alive_cell.set(r, c, (!legality || (*legality)(r, c)) && grid.at(r, c, alpha) > threshold);

  const int half = cfg.alive_window / 2;
  BoolGrid mask(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      bool any = false;
      for (int rr = std::max(0, r - half); rr <= std::min(h - 1, r + half) && !any; ++rr)
        for (int cc = std::max(0, c - half); cc <= std::min(w - 1, c + half); ++cc)
          if (alive_cell(rr, cc)) {
            any = true;
            break;
          }
      mask.set(r, c, any);
    }
  }
  return mask;
}

BoolGrid stochastic_mask(Rng& rng, int height, int width, double p) {
  require(p >= 0 && p <= 1, "stochastic_mask: p must be in [0, 1]");
  BoolGrid mask(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) mask.set(r, c, bernoulli(rng, p));
  return mask;
}

namespace {

constexpr int kBlock = 8;

// Evaluates `count` cells whose inputs sit contiguously in `inputs`. Each
// cell's arithmetic is the same sequence regardless of block composition.
template <typename Real>
void dense_forward_block(const BasicModelParams<Real>& params, const Real* inputs, int count, Real* hidden_pre,
                         Real* delta) {
  const int din = params.input_dim;
  const int dh = params.hidden_dim;
  const int dout = params.output_dim;
  const Real* w1 = params.w1.data();
  const Real* w2 = params.w2.data();

  for (int b = 0; b < count; ++b) std::copy(params.b1.begin(), params.b1.end(), hidden_pre + b * dh);
  for (int i = 0; i < din; ++i) {
    const Real* row = w1 + std::size_t(i) * dh;
    for (int b = 0; b < count; ++b) {
      const Real v = inputs[std::size_t(b) * din + i];
      if (v == Real(0)) continue;
      Real* z = hidden_pre + std::size_t(b) * dh;
      for (int j = 0; j < dh; ++j) z[j] += v * row[j];
    }
  }
  for (int b = 0; b < count; ++b) {
    Real* out = delta + std::size_t(b) * dout;
    std::copy(params.b2.begin(), params.b2.end(), out);
    const Real* z = hidden_pre + std::size_t(b) * dh;
    for (int j = 0; j < dh; ++j) {
      if (!(z[j] > Real(0))) continue;
      const Real a = z[j];
      const Real* row = w2 + std::size_t(j) * dout;
      for (int ch = 0; ch < dout; ++ch) out[ch] += a * row[ch];
    }
  }
}

template <typename Real>
void check_params(const BasicModelParams<Real>& params, int input_dim, int output_dim) {
  require(params.input_dim == input_dim, "model params: input dimension does not match perception size");
  require(params.output_dim == output_dim, "model params: output dimension does not match channel count");
  require(params.w1.size() == std::size_t(params.input_dim) * params.hidden_dim &&
              params.b1.size() == std::size_t(params.hidden_dim) &&
              params.w2.size() == std::size_t(params.hidden_dim) * params.output_dim &&
              params.b2.size() == std::size_t(params.output_dim),
          "model params: tensor sizes inconsistent");
}

}  // namespace

template <typename Real>
void dense_forward(const BasicModelParams<Real>& params, std::span<const Real> input, std::span<Real> hidden_pre,
                   std::span<Real> delta) {
  require(int(input.size()) == params.input_dim && int(hidden_pre.size()) == params.hidden_dim &&
              int(delta.size()) == params.output_dim,
          "dense_forward: dimension mismatch");
  dense_forward_block(params, input.data(), 1, hidden_pre.data(), delta.data());
}

template <typename Real>
BasicField<Real> compute_delta(const BasicField<Real>& perception, const BasicModelParams<Real>& params) {
  check_params(params, perception.depth(), params.output_dim);
  BasicField<Real> out(perception.height(), perception.width(), params.output_dim);
  std::vector<Real> hidden(std::size_t(params.hidden_dim) * kBlock);
  const int cells = int(perception.cells());
  for (int start = 0; start < cells; start += kBlock) {
    const int count = std::min(kBlock, cells - start);
    dense_forward_block(params, perception.data() + std::size_t(start) * perception.depth(), count, hidden.data(),
                        out.data() + std::size_t(start) * params.output_dim);
  }
  return out;
}

namespace {

template <typename Real>
void induction_delta_cell(std::span<const Real> logits, std::span<const float> target, InductionMode mode,
                          std::span<Real> out) {
  const std::size_t k = logits.size();
  Real probs[64];
  require(k <= 64, "induction: too many classes");
  softmax<Real>(logits, std::span<Real>(probs, k));
  for (std::size_t j = 0; j < k; ++j) {
    const Real p = static_cast<Real>(target[j]);
    out[j] = mode == InductionMode::paper_formula ? -p * (Real(1) - probs[j]) : probs[j] - p;
  }
}

}  // namespace

template <typename Real>
BasicField<Real> induction_delta(const BasicCellGrid<Real>& grid, const InductionField& field, const StepConfig& cfg) {
  const int k = grid.layout().k;
  require(field.height() == grid.height() && field.width() == grid.width(), "induction_delta: field shape mismatch");
  field.validate(k);
  BasicField<Real> out(grid.height(), grid.width(), k);
  for (int r = 0; r < grid.height(); ++r)
    for (int c = 0; c < grid.width(); ++c)
      if (field.region(r, c))
        induction_delta_cell<Real>(grid.cell(r, c).first(std::size_t(k)), field.targets.cell(r, c),
                                   cfg.induction_mode, out.cell(r, c));
  return out;
}

template <typename Real>
StepInputs<Real> prepare_step(const BasicCellGrid<Real>& grid, const StepConfig& cfg, const BoolGrid& legality,
                              const InductionField* field, Rng& rng) {
  require(legality.matches(grid), "step: legality shape mismatch");
  const int h = grid.height();
  const int w = grid.width();
  const int k = grid.layout().k;

  StepInputs<Real> inputs;
  const BoolGrid alive = alive_mask(grid, cfg, &legality);
  const BoolGrid stochastic = stochastic_mask(rng, h, w, cfg.stochastic_p);
  inputs.update = BoolGrid(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) inputs.update.set(r, c, alive(r, c) && stochastic(r, c) && legality(r, c));

  if (field && !field->empty()) {
    require(field->height() == h && field->width() == w, "step: induction field shape mismatch");
    field->validate(k);
    std::vector<Real> delta(std::size_t(k), Real(0));
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (!field->region(r, c) || !legality(r, c)) continue;
        const int index = r * w + c;
        double strength = cfg.concentration;
        if (!field->concentration.empty() && field->concentration[std::size_t(index)] >= 0)
          strength = field->concentration[std::size_t(index)];
        induction_delta_cell<Real>(grid.cell(r, c).first(std::size_t(k)), field->targets.cell(r, c),
                                   cfg.induction_mode, delta);
        inputs.forced_cells.push_back(index);
        for (int j = 0; j < k; ++j) inputs.forcing.push_back(static_cast<Real>(strength) * delta[std::size_t(j)]);
      }
    }
  }
  return inputs;
}

template <typename Real>
BasicCellGrid<Real> apply_step(const BasicCellGrid<Real>& grid, const BasicModelParams<Real>& params,
                               const StepConfig& cfg, const BoolGrid& legality, const StepInputs<Real>& inputs,
                               const FilterBank& bank) {
  const ChannelLayout& layout = grid.layout();
  const int n = layout.n;
  const int k = layout.k;
  const int din = bank.perception_dim(layout);
  check_params(params, din, n);
  require(legality.matches(grid) && inputs.update.matches(grid), "step: mask shape mismatch");

  BasicCellGrid<Real> out = grid;
  const int w = grid.width();
  const Real beta = static_cast<Real>(cfg.beta);
  const Real lo = static_cast<Real>(-kStateClamp);
  const Real hi = static_cast<Real>(kStateClamp);

  std::vector<int> updated;
  for (int r = 0; r < grid.height(); ++r)
    for (int c = 0; c < w; ++c)
      if (inputs.update(r, c) && legality(r, c)) updated.push_back(r * w + c);

  std::vector<Real> perception(std::size_t(din) * kBlock);
  std::vector<Real> hidden(std::size_t(params.hidden_dim) * kBlock);
  std::vector<Real> delta(std::size_t(n) * kBlock);
  for (std::size_t start = 0; start < updated.size(); start += kBlock) {
    const int count = int(std::min<std::size_t>(kBlock, updated.size() - start));
    for (int b = 0; b < count; ++b) {
      const int index = updated[start + std::size_t(b)];
      perceive_cell(grid, bank, index / w, index % w,
                    std::span<Real>(perception.data() + std::size_t(b) * din, std::size_t(din)));
    }
    dense_forward_block(params, perception.data(), count, hidden.data(), delta.data());
    for (int b = 0; b < count; ++b) {
      const int index = updated[start + std::size_t(b)];
      Real* cell = out.data() + std::size_t(index) * n;
      const Real* d = delta.data() + std::size_t(b) * n;
      for (int ch = 0; ch < n; ++ch) cell[ch] += beta * d[ch];
    }
  }

  for (std::size_t f = 0; f < inputs.forced_cells.size(); ++f) {
    const int index = inputs.forced_cells[f];
    if (!legality(index / w, index % w)) continue;
    Real* cell = out.data() + std::size_t(index) * n;
    for (int j = 0; j < k; ++j) cell[j] -= inputs.forcing[f * std::size_t(k) + std::size_t(j)];
  }

  auto clamp_cell = [&](int index) {
    Real* cell = out.data() + std::size_t(index) * n;
    for (int ch = 0; ch < n; ++ch) cell[ch] = std::clamp(cell[ch], lo, hi);
  };
  for (int index : updated) clamp_cell(index);
  for (int index : inputs.forced_cells)
    if (legality(index / w, index % w)) clamp_cell(index);
  return out;
}

template <typename Real>
BasicCellGrid<Real> step(const BasicCellGrid<Real>& grid, const BasicModelParams<Real>& params,
                         const StepConfig& cfg, const BoolGrid& legality, const InductionField* field, Rng& rng,
                         const FilterBank& bank) {
  const auto inputs = prepare_step(grid, cfg, legality, field, rng);
  return apply_step(grid, params, cfg, legality, inputs, bank);
}

template <typename Real>
BasicCellGrid<Real> seed_configuration(int height, int width, ChannelLayout layout, int row, int col) {
  BasicCellGrid<Real> grid(height, width, layout);
  require(grid.in_bounds(row, col), "seed_configuration: position outside the grid");
  auto cell = grid.cell(row, col);
  cell[std::size_t(layout.alpha_index())] = Real(1);
  for (int ch = layout.hidden_begin(); ch < layout.n; ++ch) cell[std::size_t(ch)] = Real(1);
  return grid;
}

template <typename Real>
BasicCellGrid<Real> seed_configuration(int height, int width, ChannelLayout layout, Rng& rng) {
  const int row = int(uniform_index(rng, std::uint64_t(height)));
  const int col = int(uniform_index(rng, std::uint64_t(width)));
  return seed_configuration<Real>(height, width, layout, row, col);
}

template <typename Real>
Trajectory<Real> run(const BasicCellGrid<Real>& grid, const BasicModelParams<Real>& params, const StepConfig& cfg,
                     const BoolGrid& legality, const InductionField* field, Rng& rng, int steps, int snapshot_every,
                     Tape<Real>* tape, const FilterBank& bank) {
  require(steps >= 0, "run: negative step count");
  cfg.validate();
  Trajectory<Real> trajectory;
  trajectory.final = grid;
  if (tape) {
    tape->states.clear();
    tape->inputs.clear();
    tape->states.reserve(std::size_t(steps));
    tape->inputs.reserve(std::size_t(steps));
  }
  for (int t = 0; t < steps; ++t) {
    if (snapshot_every > 0 && t % snapshot_every == 0) {
      trajectory.snapshot_steps.push_back(t);
      trajectory.snapshots.push_back(trajectory.final);
    }
    auto inputs = prepare_step(trajectory.final, cfg, legality, field, rng);
    auto next = apply_step(trajectory.final, params, cfg, legality, inputs, bank);
    if (tape) {
      tape->states.push_back(std::move(trajectory.final));
      tape->inputs.push_back(std::move(inputs));
    }
    trajectory.final = std::move(next);
  }
  if (snapshot_every > 0 && steps % snapshot_every == 0) {
    trajectory.snapshot_steps.push_back(steps);
    trajectory.snapshots.push_back(trajectory.final);
  }
  return trajectory;
}

template <typename Real>
BasicCellGrid<Real> replay(const Tape<Real>& tape, const BasicModelParams<Real>& params, const StepConfig& cfg,
                           const BoolGrid& legality, const FilterBank& bank) {
  require(!tape.states.empty(), "replay: empty tape");
  BasicCellGrid<Real> grid = tape.states.front();
  for (const auto& inputs : tape.inputs) grid = apply_step(grid, params, cfg, legality, inputs, bank);
  return grid;
}

BoolGrid disc_mask(int height, int width, double center_r, double center_c, double radius, bool closed) {
  BoolGrid mask(height, width);
  const double r2 = radius * radius;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double d2 = (r - center_r) * (r - center_r) + (c - center_c) * (c - center_c);
      mask.set(r, c, closed ? d2 <= r2 : d2 < r2);
    }
  }
  return mask;
}

#define NCA_INSTANTIATE_STEP(Real)                                                                              \
  template BoolGrid alive_mask(const BasicCellGrid<Real>&, const StepConfig&, const BoolGrid*);                 \
  template void dense_forward(const BasicModelParams<Real>&, std::span<const Real>, std::span<Real>,           \
                              std::span<Real>);                                                                 \
  template BasicField<Real> compute_delta(const BasicField<Real>&, const BasicModelParams<Real>&);              \
  template BasicField<Real> induction_delta(const BasicCellGrid<Real>&, const InductionField&,                  \
                                            const StepConfig&);                                                 \
  template StepInputs<Real> prepare_step(const BasicCellGrid<Real>&, const StepConfig&, const BoolGrid&,        \
                                         const InductionField*, Rng&);                                          \
  template BasicCellGrid<Real> apply_step(const BasicCellGrid<Real>&, const BasicModelParams<Real>&,            \
                                          const StepConfig&, const BoolGrid&, const StepInputs<Real>&,          \
                                          const FilterBank&);                                                   \
  template BasicCellGrid<Real> step(const BasicCellGrid<Real>&, const BasicModelParams<Real>&, const StepConfig&, \
                                    const BoolGrid&, const InductionField*, Rng&, const FilterBank&);           \
  template BasicCellGrid<Real> seed_configuration<Real>(int, int, ChannelLayout, int, int);                     \
  template BasicCellGrid<Real> seed_configuration<Real>(int, int, ChannelLayout, Rng&);                         \
  template Trajectory<Real> run(const BasicCellGrid<Real>&, const BasicModelParams<Real>&, const StepConfig&,   \
                                const BoolGrid&, const InductionField*, Rng&, int, int, Tape<Real>*,            \
                                const FilterBank&);                                                             \
  template BasicCellGrid<Real> replay(const Tape<Real>&, const BasicModelParams<Real>&, const StepConfig&,      \
                                      const BoolGrid&, const FilterBank&);

NCA_INSTANTIATE_STEP(float)
NCA_INSTANTIATE_STEP(double)

#undef NCA_INSTANTIATE_STEP

}  // namespace nca

#include "nca/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "nca/eval.hpp"
#include "nca/parallel.hpp"

namespace nca {

using nlohmann::json;

int TrainTarget::cls(int r, int c) const {
  if (!alive(r, c)) return -1;
  auto p = class_probs.cell(r, c);
  return int(std::max_element(p.begin(), p.end()) - p.begin());
}

TrainTarget TrainTarget::from_sample(const MapSample& sample, int k) {
  TrainTarget t;
  t.location = sample.location;
  t.timestamp = sample.timestamp;
  t.class_probs = Field(sample.height, sample.width, k);
  t.alive = sample.legality;
  t.legality = sample.legality;
  for (int r = 0; r < sample.height; ++r) {
    for (int c = 0; c < sample.width; ++c) {
      const int cls = sample.cls(r, c);
      if (cls == kBackground) continue;
      if (cls < 0 || cls >= k) throw DataError("sample " + sample.timestamp + ": class outside the legend");
      t.class_probs.at(r, c, cls) = 1.0f;
    }
  }
  return t;
}

namespace {

void check_target(const TrainTarget& target, int height, int width, int k) {
  require(target.legality.height() == height && target.legality.width() == width &&
              target.alive.height() == height && target.alive.width() == width &&
              target.class_probs.height() == height && target.class_probs.width() == width,
          "target shape does not match the grid");
  require(target.class_probs.depth() == k, "target class count does not match the layout");
}

}  // namespace

template <typename Real>
LossResult loss(const BasicCellGrid<Real>& final, const TrainTarget& target) {
  const int h = final.height();
  const int w = final.width();
  const int k = final.layout().k;
  const int alpha = final.layout().alpha_index();
  check_target(target, h, w, k);

  LossResult result;
  result.per_cell.assign(final.cells(), 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!target.legality(r, c)) continue;
      const double alive = target.alive(r, c) ? 1.0 : 0.0;
      double cell = 0;
      if (alive > 0) {
        auto x = final.cell(r, c);
        double top = double(x[0]);
        for (int j = 1; j < k; ++j) top = std::max(top, double(x[std::size_t(j)]));
        double sum = 0;
        for (int j = 0; j < k; ++j) sum += std::exp(double(x[std::size_t(j)]) - top);
        const double lse = top + std::log(sum);
        for (int j = 0; j < k; ++j) {
          const double p = target.class_probs.at(r, c, j);
          if (p > 0) cell += p * (std::log(p) - (double(x[std::size_t(j)]) - lse));
        }
      }
      const double d = double(final.at(r, c, alpha)) - alive;
      cell += d * d;
      result.per_cell[std::size_t(r) * std::size_t(w) + std::size_t(c)] = cell;
      result.total += cell;
    }
  }
  return result;
}

template <typename Real>
BasicField<Real> loss_gradient(const BasicCellGrid<Real>& final, const TrainTarget& target) {
  const int h = final.height();
  const int w = final.width();
  const int k = final.layout().k;
  const int alpha = final.layout().alpha_index();
  check_target(target, h, w, k);

  BasicField<Real> grad(h, w, final.layout().n);
  std::vector<double> probs(static_cast<std::size_t>(k));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!target.legality(r, c)) continue;
      const bool alive = target.alive(r, c);
      if (alive) {
        auto x = final.cell(r, c);
        double top = double(x[0]);
        for (int j = 1; j < k; ++j) top = std::max(top, double(x[std::size_t(j)]));
        double sum = 0;
        for (int j = 0; j < k; ++j) sum += probs[std::size_t(j)] = std::exp(double(x[std::size_t(j)]) - top);
        double mass = 0;
        for (int j = 0; j < k; ++j) mass += target.class_probs.at(r, c, j);
        for (int j = 0; j < k; ++j)
          grad.at(r, c, j) = static_cast<Real>(probs[std::size_t(j)] / sum * mass - target.class_probs.at(r, c, j));
      }
      grad.at(r, c, alpha) = static_cast<Real>(2.0 * (double(final.at(r, c, alpha)) - (alive ? 1.0 : 0.0)));
    }
  }
  return grad;
}

template <typename Real>
BasicModelParams<Real> backward(const Tape<Real>& tape, const BasicCellGrid<Real>& final, const TrainTarget& target,
                                const BasicModelParams<Real>& params, const StepConfig& cfg, const BoolGrid& legality,
                                const FilterBank& bank) {
  const ChannelLayout& layout = final.layout();
  const int n = layout.n;
  const int k = layout.k;
  const int h = final.height();
  const int w = final.width();
  const int din = bank.perception_dim(layout);
  const int dh = params.hidden_dim;
  require(tape.states.size() == tape.inputs.size(), "backward: tape states and inputs disagree");
  require(params.input_dim == din && params.output_dim == n, "backward: params do not match the trajectory");
  require(params.w1.size() == std::size_t(din) * dh && params.w2.size() == std::size_t(dh) * n,
          "backward: params tensors inconsistent");
  require(legality.matches(final), "backward: legality shape mismatch");
  for (const auto& s : tape.states)
    require(s.same_shape(final) && s.layout() == layout, "backward: trajectory shape mismatch");

  auto grads = BasicModelParams<Real>::zeros(din, dh, n);
  BasicField<Real> g = loss_gradient(final, target);

  const Real beta = static_cast<Real>(cfg.beta);
  const Real lo = static_cast<Real>(-kStateClamp);
  const Real hi = static_cast<Real>(kStateClamp);
  std::vector<Real> v(static_cast<std::size_t>(din)), z(static_cast<std::size_t>(dh));
  std::vector<Real> delta(static_cast<std::size_t>(n)), gd(static_cast<std::size_t>(n));
  std::vector<Real> gh(static_cast<std::size_t>(dh)), gv(static_cast<std::size_t>(din));

  for (int t = tape.steps() - 1; t >= 0; --t) {
    const BasicCellGrid<Real>& x = tape.states[std::size_t(t)];
    const StepInputs<Real>& in = tape.inputs[std::size_t(t)];

    std::vector<int> updated;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (in.update(r, c) && legality(r, c)) updated.push_back(r * w + c);

    // Forward recomputation of the step, keeping per-cell activations.
    std::vector<Real> inputs(updated.size() * std::size_t(din));
    std::vector<Real> pre(updated.size() * std::size_t(dh));
    BasicField<Real> y = x;
    for (std::size_t u = 0; u < updated.size(); ++u) {
      const int index = updated[u];
      std::span<Real> vu(inputs.data() + u * std::size_t(din), std::size_t(din));
      std::span<Real> zu(pre.data() + u * std::size_t(dh), std::size_t(dh));
      perceive_cell(x, bank, index / w, index % w, vu);
      dense_forward<Real>(params, vu, zu, delta);
      Real* cell = y.data() + std::size_t(index) * n;
      for (int ch = 0; ch < n; ++ch) cell[ch] += beta * delta[std::size_t(ch)];
    }
    std::vector<int> forced;
    for (std::size_t f = 0; f < in.forced_cells.size(); ++f) {
      const int index = in.forced_cells[f];
      if (!legality(index / w, index % w)) continue;
      forced.push_back(index);
      Real* cell = y.data() + std::size_t(index) * n;
      for (int j = 0; j < k; ++j) cell[j] -= in.forcing[f * std::size_t(k) + std::size_t(j)];
    }

    // Clamp: values that were cut off pass no gradient.
    auto gate = [&](int index) {
      const Real* yc = y.data() + std::size_t(index) * n;
      Real* gc = g.data() + std::size_t(index) * n;
      for (int ch = 0; ch < n; ++ch)
        if (yc[ch] < lo || yc[ch] > hi) gc[ch] = Real(0);
    };
    for (int index : updated) gate(index);
    for (int index : forced) gate(index);

    BasicField<Real> g_prev = g;
    for (std::size_t u = 0; u < updated.size(); ++u) {
      const int index = updated[u];
      const Real* gc = g.data() + std::size_t(index) * n;
      bool any = false;
      for (int ch = 0; ch < n; ++ch) {
        gd[std::size_t(ch)] = beta * gc[ch];
        any = any || gd[std::size_t(ch)] != Real(0);
      }
      if (!any) continue;
      const Real* vu = inputs.data() + u * std::size_t(din);
      const Real* zu = pre.data() + u * std::size_t(dh);

      for (int ch = 0; ch < n; ++ch) grads.b2[std::size_t(ch)] += gd[std::size_t(ch)];
      bool hidden_any = false;
      for (int j = 0; j < dh; ++j) {
        if (!(zu[j] > Real(0))) {
          gh[std::size_t(j)] = Real(0);
          continue;
        }
        const Real a = zu[j];
        const Real* w2row = params.w2.data() + std::size_t(j) * n;
        Real* dw2row = grads.w2.data() + std::size_t(j) * n;
        Real acc = 0;
        for (int ch = 0; ch < n; ++ch) {
          dw2row[ch] += a * gd[std::size_t(ch)];
          acc += w2row[ch] * gd[std::size_t(ch)];
        }
        gh[std::size_t(j)] = acc;
        hidden_any = hidden_any || acc != Real(0);
      }
      if (!hidden_any) continue;
      for (int j = 0; j < dh; ++j) grads.b1[std::size_t(j)] += gh[std::size_t(j)];
      for (int i = 0; i < din; ++i) {
        const Real* w1row = params.w1.data() + std::size_t(i) * dh;
        Real acc = 0;
        for (int j = 0; j < dh; ++j) acc += w1row[j] * gh[std::size_t(j)];
        gv[std::size_t(i)] = acc;
        const Real vi = vu[i];
        if (vi == Real(0)) continue;
        Real* dw1row = grads.w1.data() + std::size_t(i) * dh;
        for (int j = 0; j < dh; ++j) dw1row[j] += vi * gh[std::size_t(j)];
      }
      perceive_cell_backward(x, bank, index / w, index % w, std::span<const Real>(gv), g_prev);
    }
    g = std::move(g_prev);
  }
  return grads;
}

AdamState AdamState::for_params(const ModelParams& params, double lr) {
  AdamState s;
  s.m_w1.assign(params.w1.size(), 0.0);
  s.v_w1.assign(params.w1.size(), 0.0);
  s.m_b1.assign(params.b1.size(), 0.0);
  s.v_b1.assign(params.b1.size(), 0.0);
  s.m_w2.assign(params.w2.size(), 0.0);
  s.v_w2.assign(params.w2.size(), 0.0);
  s.lr = lr;
  return s;
}

namespace {

void adam_tensor(std::vector<float>& p, const std::vector<float>& g, std::vector<double>& m, std::vector<double>& v,
                 const AdamState& s, double bc1, double bc2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
    const double update = s.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s.eps);
    p[i] = static_cast<float>(double(p[i]) - update);
  }
}

}  // namespace

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state) {
  require(params.same_shape(grads), "adam_step: gradient shape mismatch");
  require(state.m_w1.size() == params.w1.size() && state.v_w1.size() == params.w1.size() &&
              state.m_b1.size() == params.b1.size() && state.v_b1.size() == params.b1.size() &&
              state.m_w2.size() == params.w2.size() && state.v_w2.size() == params.w2.size(),
          "adam_step: optimizer state shape mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  adam_tensor(params.w1, grads.w1, state.m_w1, state.v_w1, state, bc1, bc2);
  adam_tensor(params.b1, grads.b1, state.m_b1, state.v_b1, state, bc1, bc2);
  adam_tensor(params.w2, grads.w2, state.m_w2, state.v_w2, state, bc1, bc2);
}

void normalize_per_layer(ModelParams& grads) {
  for (auto* t : {&grads.w1, &grads.b1, &grads.w2, &grads.b2}) {
    double sq = 0;
    for (float v : *t) sq += double(v) * double(v);
    if (sq <= 0) continue;
    const double scale = 1.0 / std::sqrt(sq);
    for (float& v : *t) v = static_cast<float>(double(v) * scale);
  }
}

std::string to_string(Task task) {
  switch (task) {
    case Task::grow: return "grow";
    case Task::persist: return "persist";
    case Task::regenerate: return "regenerate";
    case Task::transform: return "transform";
  }
  return "?";
}

void TrainConfig::validate() const {
  require(steps >= 1, "train: steps must be >= 1");
  require(batch_size >= 1, "train: batch_size must be >= 1");
  require(epochs >= 0, "train: epochs must be >= 0");
  require(lr >= 0 && std::isfinite(lr), "train: lr must be >= 0");
  require(lr_decay_at >= 0 && lr_decay_at <= 1, "train: lr_decay_at must be in [0, 1]");
  require(lr_decay_factor > 0 && std::isfinite(lr_decay_factor), "train: lr_decay_factor must be positive");
  require(pool_size >= batch_size, "train: pool_size must be >= batch_size");
  double total = 0;
  for (double p : task_mix.weights()) {
    require(p >= 0 && std::isfinite(p), "train: task mix weights must be >= 0");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-9, "train: task mix must sum to 1");
  require(damage_radius_min >= 0 && damage_radius_max >= damage_radius_min,
          "train: damage radius range must satisfy 0 <= min <= max");
  require(diameter_ratio > 0 && diameter_ratio <= 1, "train: diameter_ratio must be in (0, 1]");
  require(checkpoint_every >= 0, "train: checkpoint_every must be >= 0");
}

double TrainConfig::lr_at(long epoch) const {
  return double(epoch) >= lr_decay_at * double(epochs) ? lr * lr_decay_factor : lr;
}

InductionField make_induction(const TrainTarget& target, const Disc& disc, int k) {
  const int h = target.height();
  const int w = target.width();
  InductionField field(h, w, k);
  const BoolGrid mask = disc.mask(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (mask(r, c) && target.legality(r, c) && target.alive(r, c)) field.set(r, c, target.class_probs.cell(r, c));
  return field;
}

CellGrid grow_state(const TrainTarget& target, const Disc& disc, ChannelLayout layout) {
  CellGrid grid(target.height(), target.width(), layout);
  const BoolGrid mask = disc.mask(target.height(), target.width());
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      if (!mask(r, c) || !target.legality(r, c)) continue;
      auto cell = grid.cell(r, c);
      cell[std::size_t(layout.alpha_index())] = 1.0f;
      for (int ch = layout.hidden_begin(); ch < layout.n; ++ch) cell[std::size_t(ch)] = 1.0f;
    }
  }
  return grid;
}

void apply_damage(CellGrid& grid, double center_r, double center_c, double radius) {
  require(radius >= 0, "damage radius must be >= 0");
  const BoolGrid mask = disc_mask(grid.height(), grid.width(), center_r, center_c, radius, false);
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      if (!mask(r, c)) continue;
      auto cell = grid.cell(r, c);
      std::fill(cell.begin(), cell.end(), 0.0f);
    }
  }
}

RolloutStart make_rollout_start(const PoolEntry& entry, Task task, int target_index, const TrainTarget& target,
                                const TrainConfig& cfg, ChannelLayout layout, Rng& rng) {
  const int h = target.height();
  const int w = target.width();
  check_target(target, h, w, layout.k);

  RolloutStart out;
  out.task = task;
  if (!entry.seeded()) out.task = Task::grow;
  if (out.task == Task::transform && target_index == entry.target) out.task = Task::persist;
  if (out.task != Task::grow) {
    require(entry.state.height() == h && entry.state.width() == w && entry.state.layout() == layout,
            "pool entry state does not match the target map");
  }
  if (out.task == Task::persist || out.task == Task::regenerate)
    require(target_index == entry.target, "persist/regenerate must keep the entry's target");

  switch (out.task) {
    case Task::grow:
      out.disc = sample_disc_placement(rng, h, w, cfg.diameter_ratio);
      out.grid = grow_state(target, out.disc, layout);
      break;
    case Task::persist:
      out.disc = entry.disc;
      out.grid = entry.state;
      break;
    case Task::regenerate: {
      out.disc = entry.disc;
      out.grid = entry.state;
      const double radius = uniform(rng, cfg.damage_radius_min, cfg.damage_radius_max);
      const double cr = double(uniform_index(rng, std::uint64_t(h)));
      const double cc = double(uniform_index(rng, std::uint64_t(w)));
      apply_damage(out.grid, cr, cc, radius);
      break;
    }
    case Task::transform:
      out.disc = sample_disc_placement(rng, h, w, cfg.diameter_ratio);
      out.grid = entry.state;
      break;
  }
  out.field = make_induction(target, out.disc, layout.k);
  return out;
}

json EpochLog::to_json() const {
  json tasks_json = json::object();
  json acc_json = json::object();
  for (int t = 0; t < 4; ++t) {
    const std::string name = to_string(Task(t));
    tasks_json[name] = tasks[std::size_t(t)];
    const double a = task_accuracy[std::size_t(t)];
    acc_json[name] = std::isnan(a) ? json(nullptr) : json(a);
  }
  return {{"epoch", epoch},       {"loss", loss},           {"lr", lr},
          {"tasks", tasks_json}, {"task_accuracy", acc_json}, {"wall_seconds", wall_seconds}};
}

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kLoopStream = 0x7001;

Task draw_task(Rng& rng, const TaskMix& mix) {
  const auto weights = mix.weights();
  const double u = uniform01(rng);
  double acc = 0;
  for (int t = 0; t < 4; ++t) {
    acc += weights[std::size_t(t)];
    if (u < acc) return Task(t);
  }
  for (int t = 3; t >= 0; --t)
    if (weights[std::size_t(t)] > 0) return Task(t);
  return Task::grow;
}

struct RolloutResult {
  Task task = Task::grow;
  int target = 0;
  CellGrid final;
  Disc disc;
  double loss = 0;
  double accuracy = 0;
  ModelParams grads;
};

}  // namespace

Trainer::Trainer(std::vector<TrainTarget> targets, ModelConfig model, StepConfig step, TrainConfig train)
    : targets_(std::move(targets)) {
  state_.model = model;
  state_.step = step;
  state_.train = train;
  model.layout.validate();
  require(model.hidden_dim >= 1, "model: hidden_dim must be >= 1");
  step.validate();
  train.validate();
  check_targets();

  const int din = standard_filter_bank().perception_dim(model.layout);
  Rng init(derive_seed(train.seed, kInitStream));
  state_.params = ModelParams::initial(din, model.hidden_dim, model.layout.n, init);
  state_.adam = AdamState::for_params(state_.params, train.lr);
  state_.rng = Rng(derive_seed(train.seed, kLoopStream));
  state_.pool.assign(std::size_t(train.pool_size), PoolEntry{});
}

Trainer::Trainer(std::vector<TrainTarget> targets, TrainerState state)
    : targets_(std::move(targets)), state_(std::move(state)) {
  state_.model.layout.validate();
  state_.step.validate();
  state_.train.validate();
  check_targets();
  const int din = standard_filter_bank().perception_dim(state_.model.layout);
  require(state_.params.input_dim == din && state_.params.hidden_dim == state_.model.hidden_dim &&
              state_.params.output_dim == state_.model.layout.n,
          "trainer state: params do not match the model config");
  require(int(state_.pool.size()) == state_.train.pool_size, "trainer state: pool size mismatch");
  for (const auto& e : state_.pool) {
    require(e.target >= 0 && e.target < int(targets_.size()), "trainer state: pool entry names an unknown target");
    if (e.seeded())
      require(e.state.height() == targets_[std::size_t(e.target)].height() &&
                  e.state.width() == targets_[std::size_t(e.target)].width(),
              "trainer state: pool entry shape mismatch");
  }
}

void Trainer::check_targets() const {
  require(!targets_.empty(), "train: dataset is empty");
  for (const auto& t : targets_) check_target(t, t.height(), t.width(), state_.model.layout.k);
}

EpochLog Trainer::run_epoch(int threads) {
  const auto started = std::chrono::steady_clock::now();
  const TrainConfig& cfg = state_.train;
  const ChannelLayout layout = state_.model.layout;
  Rng rng = state_.rng;

  std::vector<int> order(static_cast<std::size_t>(cfg.pool_size));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto j = std::size_t(i) + std::size_t(uniform_index(rng, std::uint64_t(cfg.pool_size - i)));
    std::swap(order[std::size_t(i)], order[j]);
  }

  struct Job {
    int slot;
    Task task;
    int target;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const int slot = order[std::size_t(b)];
    const PoolEntry& entry = state_.pool[std::size_t(slot)];
    Task task = draw_task(rng, cfg.task_mix);
    if (!entry.seeded()) task = Task::grow;
    int target = entry.target;
    if (task == Task::grow) {
      target = int(uniform_index(rng, targets_.size()));
    } else if (task == Task::transform) {
      const TrainTarget& current = targets_[std::size_t(entry.target)];
      std::vector<int> candidates;
      for (int t = 0; t < int(targets_.size()); ++t) {
        const auto& other = targets_[std::size_t(t)];
        if (other.location == current.location && other.legality == current.legality) candidates.push_back(t);
      }
      target = candidates[std::size_t(uniform_index(rng, candidates.size()))];
    }
    jobs.push_back({slot, task, target, rng()});
  }

  const ModelParams& params = state_.params;
  std::vector<RolloutResult> results(jobs.size());
  parallel_for(int(jobs.size()), threads, [&](int b) {
    const Job& job = jobs[std::size_t(b)];
    const TrainTarget& target = targets_[std::size_t(job.target)];
    Rng local(job.seed);
    RolloutStart start = make_rollout_start(state_.pool[std::size_t(job.slot)], job.task, job.target, target, cfg,
                                            layout, local);
    Tape<float> tape;
    auto trajectory = run(start.grid, params, state_.step, target.legality, &start.field, local, cfg.steps, 0, &tape);
    RolloutResult& out = results[std::size_t(b)];
    out.task = start.task;
    out.target = job.target;
    out.disc = start.disc;
    out.loss = loss(trajectory.final, target).total;
    out.accuracy = accuracy(trajectory.final, target, state_.step.alive_threshold);
    out.grads = backward(tape, trajectory.final, target, params, state_.step, target.legality);
    out.final = std::move(trajectory.final);
  });

  EpochLog log;
  log.task_accuracy.fill(0.0);
  double total = 0;
  auto grads = ModelParams::zeros(params.input_dim, params.hidden_dim, params.output_dim);
  for (const auto& r : results) {
    total += r.loss;
    log.tasks[std::size_t(r.task)] += 1;
    log.task_accuracy[std::size_t(r.task)] += r.accuracy;
    for (std::size_t i = 0; i < grads.w1.size(); ++i) grads.w1[i] += r.grads.w1[i];
    for (std::size_t i = 0; i < grads.b1.size(); ++i) grads.b1[i] += r.grads.b1[i];
    for (std::size_t i = 0; i < grads.w2.size(); ++i) grads.w2[i] += r.grads.w2[i];
    for (std::size_t i = 0; i < grads.b2.size(); ++i) grads.b2[i] += r.grads.b2[i];
  }
  log.loss = total / double(results.size());
  if (!std::isfinite(log.loss) || !grads.all_finite())
    throw TrainingDiverged("non-finite loss at epoch " + std::to_string(state_.epoch + 1));
  for (int t = 0; t < 4; ++t) {
    auto& a = log.task_accuracy[std::size_t(t)];
    a = log.tasks[std::size_t(t)] > 0 ? a / log.tasks[std::size_t(t)] : std::numeric_limits<double>::quiet_NaN();
  }

  const float inv = 1.0f / float(results.size());
  for (auto* t : {&grads.w1, &grads.b1, &grads.w2, &grads.b2})
    for (float& v : *t) v *= inv;
  if (cfg.normalize_gradients) normalize_per_layer(grads);
  state_.adam.lr = cfg.lr_at(state_.epoch);
  log.lr = state_.adam.lr;
  adam_step(state_.params, grads, state_.adam);

  for (std::size_t b = 0; b < jobs.size(); ++b) {
    PoolEntry& entry = state_.pool[std::size_t(jobs[b].slot)];
    RolloutResult& r = results[b];
    entry.age = r.task == Task::grow || r.task == Task::transform ? std::uint64_t(cfg.steps)
                                                                   : entry.age + std::uint64_t(cfg.steps);
    entry.state = std::move(r.final);
    entry.target = r.target;
    entry.task = r.task;
    entry.disc = r.disc;
  }
  state_.rng = rng;
  state_.epoch += 1;
  log.epoch = state_.epoch;
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

TrainResult train(const std::vector<const MapSample*>& dataset, const ModelConfig& model, const StepConfig& step,
                  const TrainConfig& cfg, int threads,
                  const std::function<void(const Trainer&, const EpochLog&)>& on_epoch) {
  require(!dataset.empty(), "train: dataset is empty");
  std::vector<TrainTarget> targets;
  for (const MapSample* s : dataset) targets.push_back(TrainTarget::from_sample(*s, model.layout.k));
  Trainer trainer(std::move(targets), model, step, cfg);
  TrainResult result;
  while (!trainer.done()) {
    result.log.push_back(trainer.run_epoch(threads));
    if (on_epoch) on_epoch(trainer, result.log.back());
  }
  result.params = trainer.params();
  return result;
}

#define NCA_INSTANTIATE_TRAINER(Real)                                                                          \
  template LossResult loss(const BasicCellGrid<Real>&, const TrainTarget&);                                    \
  template BasicField<Real> loss_gradient(const BasicCellGrid<Real>&, const TrainTarget&);                     \
  template BasicModelParams<Real> backward(const Tape<Real>&, const BasicCellGrid<Real>&, const TrainTarget&,  \
                                           const BasicModelParams<Real>&, const StepConfig&, const BoolGrid&, \
                                           const FilterBank&);

NCA_INSTANTIATE_TRAINER(float)
NCA_INSTANTIATE_TRAINER(double)

#undef NCA_INSTANTIATE_TRAINER

}  // namespace nca

#include "nca/config.hpp"

#include <fstream>
#include <set>

namespace nca {

using nlohmann::json;

namespace {

void check_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("");
    }
    out = it->get<T>();
  } catch (const std::exception&) {
    throw ConfigError(where + "." + key + ": wrong value type");
  }
}

}  // namespace

json to_json(const ModelConfig& m) { return {{"k", m.layout.k}, {"n", m.layout.n}, {"hidden_dim", m.hidden_dim}}; }

json to_json(const StepConfig& s) {
  return {{"beta", s.beta},
          {"concentration", s.concentration},
          {"stochastic_p", s.stochastic_p},
          {"alive_threshold", s.alive_threshold},
          {"alive_window", s.alive_window},
          {"induction_mode", to_string(s.induction_mode)}};
}

json to_json(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"lr", t.lr},
          {"lr_decay_at", t.lr_decay_at},
          {"lr_decay_factor", t.lr_decay_factor},
          {"pool_size", t.pool_size},
          {"task_mix",
           {{"grow", t.task_mix.grow},
            {"persist", t.task_mix.persist},
            {"regenerate", t.task_mix.regenerate},
            {"transform", t.task_mix.transform}}},
          {"damage_radius_min", t.damage_radius_min},
          {"damage_radius_max", t.damage_radius_max},
          {"diameter_ratio", t.diameter_ratio},
          {"normalize_gradients", t.normalize_gradients},
          {"checkpoint_every", t.checkpoint_every},
          {"seed", t.seed}};
}

json to_json(const EvalConfig& e) {
  return {{"trials", e.trials},
          {"steps", e.steps},
          {"diameter_ratio", e.diameter_ratio},
          {"exclude_pre_explored", e.exclude_pre_explored},
          {"seed", e.seed},
          {"timing_runs", e.timing_runs}};
}

void merge(ModelConfig& m, const json& j) {
  check_object(j, "model");
  reject_unknown(j, {"k", "n", "hidden_dim"}, "model");
  read(j, "k", m.layout.k, "model");
  read(j, "n", m.layout.n, "model");
  read(j, "hidden_dim", m.hidden_dim, "model");
}

void merge(StepConfig& s, const json& j) {
  check_object(j, "step");
  reject_unknown(j, {"beta", "concentration", "stochastic_p", "alive_threshold", "alive_window", "induction_mode"},
                 "step");
  read(j, "beta", s.beta, "step");
  read(j, "concentration", s.concentration, "step");
  read(j, "stochastic_p", s.stochastic_p, "step");
  read(j, "alive_threshold", s.alive_threshold, "step");
  read(j, "alive_window", s.alive_window, "step");
  if (j.contains("induction_mode")) {
    std::string mode;
    read(j, "induction_mode", mode, "step");
    try {
      s.induction_mode = induction_mode_from_string(mode);
    } catch (const ContractViolation& e) {
      throw ConfigError(std::string("step.induction_mode: ") + e.what());
    }
  }
}

void merge(TrainConfig& t, const json& j) {
  check_object(j, "train");
  reject_unknown(j,
                 {"steps", "batch_size", "epochs", "lr", "lr_decay_at", "lr_decay_factor", "pool_size", "task_mix",
                  "damage_radius_min", "damage_radius_max", "diameter_ratio", "normalize_gradients",
                  "checkpoint_every", "seed"},
                 "train");
  read(j, "steps", t.steps, "train");
  read(j, "batch_size", t.batch_size, "train");
  read(j, "epochs", t.epochs, "train");
  read(j, "lr", t.lr, "train");
  read(j, "lr_decay_at", t.lr_decay_at, "train");
  read(j, "lr_decay_factor", t.lr_decay_factor, "train");
  read(j, "pool_size", t.pool_size, "train");
  if (j.contains("task_mix")) {
    const json& m = j.at("task_mix");
    check_object(m, "train.task_mix");
    reject_unknown(m, {"grow", "persist", "regenerate", "transform"}, "train.task_mix");
    read(m, "grow", t.task_mix.grow, "train.task_mix");
    read(m, "persist", t.task_mix.persist, "train.task_mix");
    read(m, "regenerate", t.task_mix.regenerate, "train.task_mix");
    read(m, "transform", t.task_mix.transform, "train.task_mix");
  }
  read(j, "damage_radius_min", t.damage_radius_min, "train");
  read(j, "damage_radius_max", t.damage_radius_max, "train");
  read(j, "diameter_ratio", t.diameter_ratio, "train");
  read(j, "normalize_gradients", t.normalize_gradients, "train");
  read(j, "checkpoint_every", t.checkpoint_every, "train");
  read(j, "seed", t.seed, "train");
}

void merge(EvalConfig& e, const json& j) {
  check_object(j, "eval");
  reject_unknown(j, {"trials", "steps", "diameter_ratio", "exclude_pre_explored", "seed", "timing_runs"}, "eval");
  read(j, "trials", e.trials, "eval");
  read(j, "steps", e.steps, "eval");
  read(j, "diameter_ratio", e.diameter_ratio, "eval");
  read(j, "exclude_pre_explored", e.exclude_pre_explored, "eval");
  read(j, "seed", e.seed, "eval");
  read(j, "timing_runs", e.timing_runs, "eval");
}

json RunConfig::to_json() const {
  return {{"schema_version", kSchemaVersion},
          {"model", nca::to_json(model)},
          {"step", nca::to_json(step)},
          {"train", nca::to_json(train)},
          {"eval", nca::to_json(eval)}};
}

RunConfig RunConfig::from_json(const json& j) {
  check_object(j, "config");
  reject_unknown(j, {"schema_version", "model", "step", "train", "eval"}, "config");
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  int version = 0;
  read(j, "schema_version", version, "config");
  if (version != kSchemaVersion)
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));
  RunConfig cfg;
  if (j.contains("model")) merge(cfg.model, j.at("model"));
  if (j.contains("step")) merge(cfg.step, j.at("step"));
  if (j.contains("train")) merge(cfg.train, j.at("train"));
  if (j.contains("eval")) merge(cfg.eval, j.at("eval"));
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void RunConfig::set(const std::string& path, const json& value) {
  json patch = value;
  std::string rest = path;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  if (parts.size() < 2) throw ConfigError("config override '" + path + "' needs a section");
  for (auto it = parts.rbegin(); it != parts.rend() - 1; ++it) patch = json{{*it, patch}};
  const std::string& section = parts.front();
  if (section == "model")
    merge(model, patch);
  else if (section == "step")
    merge(step, patch);
  else if (section == "train")
    merge(train, patch);
  else if (section == "eval")
    merge(eval, patch);
  else
    throw ConfigError("config: unknown section '" + section + "'");
}

void RunConfig::validate() const {
  model.layout.validate();
  require(model.hidden_dim >= 1, "model: hidden_dim must be >= 1");
  step.validate();
  train.validate();
  eval.validate();
}

}  // namespace nca

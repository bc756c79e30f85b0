#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "nca/eval.hpp"
#include "nca/trainer.hpp"

namespace nca {

/// Malformed or unknown configuration (a usage error for the CLI).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const ModelConfig& model);
nlohmann::json to_json(const StepConfig& step);
nlohmann::json to_json(const TrainConfig& train);
nlohmann::json to_json(const EvalConfig& eval);

/// Overlay a (possibly partial) JSON object onto an existing config.
/// Unknown keys and wrong value types raise ConfigError.
void merge(ModelConfig& model, const nlohmann::json& j);
void merge(StepConfig& step, const nlohmann::json& j);
void merge(TrainConfig& train, const nlohmann::json& j);
void merge(EvalConfig& eval, const nlohmann::json& j);

/// A complete run description:
///   {"schema_version": 1, "model": {...}, "step": {...}, "train": {...}, "eval": {...}}
/// Sections may be partial; missing fields keep their defaults.
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  ModelConfig model;
  StepConfig step;
  TrainConfig train;
  EvalConfig eval;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Applies one dotted-path override such as "train.lr" (value as JSON).
  void set(const std::string& path, const nlohmann::json& value);
  /// Range and consistency checks of every section (ContractViolation).
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

}  // namespace nca

#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "nca/config.hpp"

using namespace nca;
using nlohmann::json;

TEST_CASE("defaults round trip through json") {
  const RunConfig cfg;
  const json j = cfg.to_json();
  CHECK(j.at("schema_version") == 1);
  CHECK(j.at("step").at("induction_mode") == "paper-formula");
  CHECK(j.at("train").at("steps") == 128);
  CHECK(j.at("eval").at("trials") == 10);
  CHECK(RunConfig::from_json(j) == cfg);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("partial sections keep defaults") {
  const auto cfg = RunConfig::from_json(json{{"schema_version", 1}, {"train", {{"lr", 0.01}}}});
  CHECK(cfg.train.lr == 0.01);
  CHECK(cfg.train.steps == 128);
  CHECK(cfg.step == StepConfig{});
  const auto mix = RunConfig::from_json(
      json{{"schema_version", 1}, {"train", {{"task_mix", {{"grow", 1.0}, {"persist", 0.0}, {"regenerate", 0.0}, {"transform", 0.0}}}}}});
  CHECK(mix.train.task_mix.grow == 1.0);
  CHECK_NOTHROW(mix.validate());
}

TEST_CASE("rejected configs") {
  const json base = RunConfig{}.to_json();
  auto with = [&](auto edit) {
    json j = base;
    edit(j);
    return j;
  };
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j.erase("schema_version"); })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["schema_version"] = 2; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["extra"] = {}; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["train"]["learning_rate"] = 1; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["train"]["task_mix"]["idle"] = 0; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["train"]["steps"] = "many"; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["train"]["steps"] = 1.5; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["train"]["normalize_gradients"] = 1; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["step"]["induction_mode"] = "magic"; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(with([](json& j) { j["model"] = 3; })), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::array()), ConfigError);
}

TEST_CASE("range errors surface from validate") {
  RunConfig cfg;
  cfg.step.stochastic_p = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = RunConfig{};
  cfg.model.layout.n = 5;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = RunConfig{};
  cfg.eval.trials = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = RunConfig{};
  cfg.train.pool_size = 4;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
}

TEST_CASE("dotted overrides") {
  RunConfig cfg;
  cfg.set("train.lr", 0.5);
  cfg.set("train.task_mix.grow", 0.4);
  cfg.set("step.induction_mode", "exact-kl-gradient");
  cfg.set("model.hidden_dim", 64);
  cfg.set("eval.exclude_pre_explored", true);
  CHECK(cfg.train.lr == 0.5);
  CHECK(cfg.train.task_mix.grow == 0.4);
  CHECK(cfg.train.task_mix.persist == 0.35);
  CHECK(cfg.step.induction_mode == InductionMode::exact_kl_gradient);
  CHECK(cfg.model.hidden_dim == 64);
  CHECK(cfg.eval.exclude_pre_explored);
  CHECK_THROWS_AS(cfg.set("lr", 1), ConfigError);
  CHECK_THROWS_AS(cfg.set("optim.lr", 1), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.nope", 1), ConfigError);
}

TEST_CASE("save and load") {
  testing::TempDir dir("config");
  RunConfig cfg;
  cfg.train.seed = 123456789012345ull;
  cfg.step.concentration = 0.75;
  cfg.save(dir.path() / "config.json");
  CHECK(RunConfig::load(dir.path() / "config.json") == cfg);
  std::ofstream(dir.path() / "broken.json") << "{ not json";
  CHECK_THROWS_AS(RunConfig::load(dir.path() / "broken.json"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(dir.path() / "missing.json"), ConfigError);
}

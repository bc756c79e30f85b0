// nca: dataset synthesis, training, evaluation, rollout export and the session service.
//
// Exit codes: 0 ok, 1 training diverged or internal error, 2 usage, 3 data or checkpoint,
// 4 environment (port busy, unwritable system resource).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <system_error>

#include "CLI11.hpp"
#include "json.hpp"

#include "nca/checkpoint.hpp"
#include "nca/config.hpp"
#include "nca/data_io.hpp"
#include "nca/eval.hpp"
#include "nca/parallel.hpp"
#include "nca/server.hpp"
#include "nca/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nca;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One --section.key flag per leaf of the run config, e.g. --train.lr 1e-3.
class ConfigFlags {
 public:
  void attach(CLI::App& app, std::initializer_list<const char*> sections) {
    const json defaults = RunConfig{}.to_json();
    for (const char* section : sections) add(app, section, defaults.at(section));
  }

  std::vector<std::string> given() const {
    std::vector<std::string> paths;
    for (const auto& [path, flag] : flags_)
      if (flag.option->count() > 0) paths.push_back(path);
    return paths;
  }

  bool given(const std::string& path) const {
    auto it = flags_.find(path);
    return it != flags_.end() && it->second.option->count() > 0;
  }

  void apply(RunConfig& cfg) const {
    for (const auto& [path, flag] : flags_) {
      if (flag.option->count() == 0) continue;
      json value;
      if (flag.is_string) {
        value = flag.value;
      } else {
        value = json::parse(flag.value, nullptr, false);
        if (value.is_discarded()) throw UsageError("--" + path + ": cannot parse '" + flag.value + "'");
      }
      cfg.set(path, value);
    }
  }

 private:
  struct Flag {
    CLI::Option* option = nullptr;
    std::string value;
    bool is_string = false;
  };

  void add(CLI::App& app, const std::string& prefix, const json& node) {
    for (const auto& [key, value] : node.items()) {
      const std::string path = prefix + "." + key;
      if (value.is_object()) {
        add(app, path, value);
        continue;
      }
      Flag& flag = flags_[path];
      flag.is_string = value.is_string();
      flag.option = app.add_option("--" + path, flag.value, "default " + value.dump())->group("Config");
    }
  }

  std::map<std::string, Flag> flags_;
};

RunConfig base_config(const std::string& config_path) {
  return config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
}

void make_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".nca_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw UsageError("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

std::vector<const MapSample*> pick_split(const Dataset& dataset, const std::string& split) {
  if (split == "train") return dataset.split(true);
  if (split == "test") return dataset.split(false);
  std::vector<const MapSample*> all;
  for (const auto& s : dataset.samples) all.push_back(&s);
  return all;
}

const MapSample& find_sample(const Dataset& dataset, const std::string& id) {
  for (const auto& s : dataset.samples)
    if (s.location + "/" + s.timestamp == id) return s;
  throw UsageError("unknown sample '" + id + "' (expected <location>/<timestamp>)");
}

// Model and step settings come from the checkpoint; --step.* flags may adjust stepping.
RunConfig config_for_checkpoint(const TrainerState& state, const std::string& config_path, const ConfigFlags& flags) {
  RunConfig cfg = base_config(config_path);
  cfg.model = state.model;
  cfg.step = state.step;
  cfg.train = state.train;
  flags.apply(cfg);
  if (!(cfg.model == state.model)) throw UsageError("model settings cannot differ from the checkpoint");
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  int locations = 1;
  int per_location = 80;
  int height = 80;
  int width = 80;
  int train_per_location = 64;
  std::string knobs;
};

int run_synth(const SynthArgs& a) {
  if (a.locations < 1) throw UsageError("--locations must be >= 1");
  if (a.per_location < 1) throw UsageError("--per-location must be >= 1");
  if (a.height < 8 || a.width < 8) throw UsageError("--height and --width must be >= 8");
  SynthKnobs knobs;
  if (!a.knobs.empty()) {
    std::ifstream in(a.knobs);
    if (!in) throw UsageError("cannot open knobs file " + a.knobs);
    knobs = SynthKnobs::from_json(json::parse(in));
  }
  make_output_dir(a.out);
  const Dataset dataset = synth_generate(a.seed, a.locations, a.per_location, a.height, a.width, knobs,
                                         a.train_per_location);
  fs::path manifest;
  try {
    manifest = write_dataset(dataset, a.out);
  } catch (const fs::filesystem_error& e) {
    throw UsageError(e.what());
  }
  std::cout << manifest.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string resume;
  std::optional<std::uint64_t> seed;
  std::optional<long> epochs;
  int threads = hardware_threads();
};

int run_train(const TrainArgs& a, const ConfigFlags& flags) {
  RunConfig cfg = base_config(a.config);
  std::optional<TrainerState> resumed;
  if (!a.resume.empty()) {
    resumed = load_checkpoint(a.resume);
    for (const auto& path : flags.given())
      if (path != "train.epochs" && path != "train.checkpoint_every")
        throw UsageError("--" + path + " cannot change a resumed run");
    if (a.seed) throw UsageError("--seed cannot change a resumed run");
    const RunConfig requested = cfg;
    cfg.model = resumed->model;
    cfg.step = resumed->step;
    cfg.train = resumed->train;
    flags.apply(cfg);
    if (!a.config.empty()) cfg.eval = requested.eval;
  } else {
    flags.apply(cfg);
    if (a.seed) cfg.train.seed = *a.seed;
  }
  if (a.epochs) cfg.train.epochs = *a.epochs;
  cfg.validate();

  const Dataset dataset = load_dataset(a.data);
  const auto samples = dataset.split(true);
  if (samples.empty()) throw DataError("dataset has no training samples");
  std::vector<TrainTarget> targets;
  for (const MapSample* s : samples) targets.push_back(TrainTarget::from_sample(*s, cfg.model.layout.k));

  make_output_dir(a.out);
  const fs::path out(a.out);
  cfg.save(out / "config.json");

  std::optional<Trainer> trainer;
  if (resumed) {
    resumed->train = cfg.train;
    trainer.emplace(std::move(targets), std::move(*resumed));
  } else {
    trainer.emplace(std::move(targets), cfg.model, cfg.step, cfg.train);
  }

  std::ofstream log(out / "loss.jsonl", resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw UsageError("cannot write " + (out / "loss.jsonl").string());

  char name[64];
  while (!trainer->done()) {
    EpochLog entry;
    try {
      entry = trainer->run_epoch(a.threads);
    } catch (const TrainingDiverged&) {
      save_checkpoint(out / "last_good.ckpt", trainer->state());
      throw;
    }
    log << entry.to_json().dump() << "\n";
    const long epoch = trainer->state().epoch;
    if (cfg.train.checkpoint_every > 0 && epoch % cfg.train.checkpoint_every == 0 && !trainer->done()) {
      std::snprintf(name, sizeof name, "epoch_%06ld.ckpt", epoch);
      save_checkpoint(out / name, trainer->state());
      log.flush();
    }
  }
  log.flush();
  const fs::path final_path = out / "final.ckpt";
  save_checkpoint(final_path, trainer->state());
  std::cout << final_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string config;
  std::string split = "test";
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  int threads = hardware_threads();
};

int run_eval(const EvalArgs& a, const ConfigFlags& flags) {
  const TrainerState state = load_checkpoint(a.checkpoint);
  RunConfig cfg = config_for_checkpoint(state, a.config, flags);
  if (a.seed) cfg.eval.seed = *a.seed;
  if (a.trials) cfg.eval.trials = *a.trials;
  cfg.validate();

  const Dataset dataset = load_dataset(a.data);
  const auto samples = pick_split(dataset, a.split);
  if (samples.empty()) throw DataError("no samples in split '" + a.split + "'");
  auto reference = dataset.split(true);
  if (reference.empty()) reference = samples;
  const int majority = majority_class(reference, cfg.model.layout.k);

  const EvalReport report = evaluate(state.params, cfg.model, cfg.step, samples, cfg.eval, majority, a.threads);
  make_output_dir(a.out);
  const fs::path out(a.out);
  cfg.save(out / "config.json");
  const fs::path report_path = out / "report.json";
  {
    std::ofstream f(report_path);
    f << report.to_json().dump(2) << "\n";
    if (!f) throw UsageError("cannot write " + report_path.string());
  }
  std::cout << report.table() << report_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- grow

struct GrowArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string config;
  std::string sample;
  std::string task = "grow";
  std::string transform_to;
  std::optional<int> steps;
  std::optional<int> warmup;
  int stride = 16;
  double damage_radius = 10;
  std::uint64_t seed = 0;
};

Task parse_task(const std::string& name) {
  for (Task t : {Task::grow, Task::persist, Task::regenerate, Task::transform})
    if (to_string(t) == name) return t;
  throw UsageError("--task must be grow, persist, regenerate or transform");
}

int run_grow(const GrowArgs& a, const ConfigFlags& flags) {
  const Task task = parse_task(a.task);
  const TrainerState state = load_checkpoint(a.checkpoint);
  const RunConfig cfg = config_for_checkpoint(state, a.config, flags);
  const int steps = a.steps.value_or(cfg.eval.steps);
  const int warmup = a.warmup.value_or(steps);
  if (steps < 0 || warmup < 0) throw UsageError("--steps and --warmup must be >= 0");
  if (a.stride < 1) throw UsageError("--stride must be >= 1");
  if (a.damage_radius < 0) throw UsageError("--damage-radius must be >= 0");
  if (task == Task::transform && a.transform_to.empty()) throw UsageError("--task transform needs --transform-to");

  const Dataset dataset = load_dataset(a.data);
  const MapSample* sample = nullptr;
  if (a.sample.empty()) {
    const auto test = dataset.split(false);
    sample = test.empty() ? &dataset.samples.at(0) : test.front();
  } else {
    sample = &find_sample(dataset, a.sample);
  }
  const int k = cfg.model.layout.k;
  const TrainTarget target = TrainTarget::from_sample(*sample, k);

  TrainConfig start_cfg = cfg.train;
  start_cfg.damage_radius_min = start_cfg.damage_radius_max = a.damage_radius;
  start_cfg.diameter_ratio = cfg.eval.diameter_ratio;
  Rng rng(derive_seed(a.seed, 0x6e0));

  PoolEntry entry;
  RolloutStart start = make_rollout_start(entry, Task::grow, 0, target, start_cfg, cfg.model.layout, rng);
  std::optional<TrainTarget> next;
  json info = {{"sample", sample->location + "/" + sample->timestamp}, {"task", a.task}, {"seed", a.seed},
               {"steps", steps},  {"stride", a.stride}};
  std::optional<CellGrid> undamaged_start;
  if (task != Task::grow) {
    entry.state = run(start.grid, state.params, cfg.step, target.legality, &start.field, rng, warmup).final;
    entry.disc = start.disc;
    int index = 0;
    const TrainTarget* goal = &target;
    if (task == Task::transform) {
      next = TrainTarget::from_sample(find_sample(dataset, a.transform_to), k);
      if (next->height() != target.height() || next->width() != target.width() || !(next->legality == target.legality))
        throw UsageError("--transform-to must share the sample's road map");
      index = 1;
      goal = &*next;
      info["transform_to"] = a.transform_to;
    }
    if (task == Task::regenerate) undamaged_start = entry.state;
    start = make_rollout_start(entry, task, index, *goal, start_cfg, cfg.model.layout, rng);
    info["warmup"] = warmup;
  }
  const TrainTarget& goal = next ? *next : target;

  Rng undamaged_rng = rng;
  const auto trajectory = run(start.grid, state.params, cfg.step, goal.legality, &start.field, rng, steps, a.stride);
  make_output_dir(a.out);
  const fs::path out(a.out);
  const auto frames = export_frames(trajectory, goal.legality, dataset.manifest.legend, cfg.step.alive_threshold,
                                    a.stride, out);
  info["frames"] = frames.size();
  info["disc"] = start.disc.to_json();
  info["accuracy"] = accuracy(trajectory.final, goal, cfg.step.alive_threshold);
  if (undamaged_start) {
    const auto plain = run(*undamaged_start, state.params, cfg.step, goal.legality, &start.field, undamaged_rng, steps);
    info["undamaged_accuracy"] = accuracy(plain.final, goal, cfg.step.alive_threshold);
    info["damage_radius"] = a.damage_radius;
  }
  std::ofstream f(out / "rollout.json");
  f << info.dump(2) << "\n";
  if (!f) throw UsageError("cannot write " + (out / "rollout.json").string());
  std::cout << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string checkpoints = ".";
  std::string data;
  std::string host = "127.0.0.1";
  int port = 8080;
  double max_rate = session::Registry::kDefaultMaxRate;
  int max_sessions = 64;
  int threads = hardware_threads();
};

int run_serve(const ServeArgs& a) {
  if (a.port < 0 || a.port > 65535) throw UsageError("--port must be in [0, 65535]");
  if (!(a.max_rate > 0)) throw UsageError("--max-rate must be > 0");
  if (a.max_sessions < 1) throw UsageError("--max-sessions must be >= 1");
  std::shared_ptr<const Dataset> dataset;
  if (!a.data.empty()) dataset = std::make_shared<const Dataset>(load_dataset(a.data));
  session::Catalog catalog(a.checkpoints, dataset);

  session::ServerOptions options;
  options.address = a.host;
  options.port = static_cast<unsigned short>(a.port);
  options.max_rate = a.max_rate;
  options.max_sessions = std::size_t(a.max_sessions);
  options.compute_threads = a.threads;
  options.handle_signals = true;
  std::unique_ptr<session::Server> server;
  try {
    server = std::make_unique<session::Server>(catalog, options);
  } catch (const std::system_error& e) {
    throw EnvironmentError(std::string("cannot listen on ") + e.what());
  }
  std::cout << "listening on http://" << a.host << ":" << server->port() << std::endl;
  server->run();
  std::cout << "stopped" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural cellular automaton for road-network class maps"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(session::kServiceVersion));

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "Dataset directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--locations", synth.locations, "Number of locations")->capture_default_str();
  synth_cmd->add_option("--per-location", synth.per_location, "Samples per location")->capture_default_str();
  synth_cmd->add_option("--height", synth.height)->capture_default_str();
  synth_cmd->add_option("--width", synth.width)->capture_default_str();
  synth_cmd->add_option("--train-per-location", synth.train_per_location)->capture_default_str();
  synth_cmd->add_option("--knobs", synth.knobs, "JSON file of generator knobs");

  TrainArgs train_args;
  ConfigFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", train_args.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--config", train_args.config, "Run config JSON");
  train_cmd->add_option("--resume", train_args.resume, "Checkpoint to continue from");
  train_cmd->add_option("--seed", train_args.seed, "Same as --train.seed");
  train_cmd->add_option("--epochs", train_args.epochs, "Same as --train.epochs");
  train_cmd->add_option("--threads", train_args.threads)->capture_default_str();
  train_flags.attach(*train_cmd, {"model", "step", "train"});

  EvalArgs eval_args;
  ConfigFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--data", eval_args.data, "Dataset directory")->required();
  eval_cmd->add_option("--out", eval_args.out, "Report directory")->required();
  eval_cmd->add_option("--config", eval_args.config, "Run config JSON");
  eval_cmd->add_option("--split", eval_args.split)->check(CLI::IsMember({"train", "test", "all"}))->capture_default_str();
  eval_cmd->add_option("--seed", eval_args.seed, "Same as --eval.seed");
  eval_cmd->add_option("--trials", eval_args.trials, "Same as --eval.trials");
  eval_cmd->add_option("--threads", eval_args.threads)->capture_default_str();
  eval_flags.attach(*eval_cmd, {"step", "eval"});

  GrowArgs grow;
  ConfigFlags grow_flags;
  auto* grow_cmd = app.add_subcommand("grow", "Run one rollout and export frames");
  grow_cmd->add_option("--checkpoint", grow.checkpoint)->required();
  grow_cmd->add_option("--data", grow.data, "Dataset directory")->required();
  grow_cmd->add_option("--out", grow.out, "Frame directory")->required();
  grow_cmd->add_option("--config", grow.config, "Run config JSON");
  grow_cmd->add_option("--sample", grow.sample, "<location>/<timestamp> (default: first test sample)");
  grow_cmd->add_option("--task", grow.task, "grow | persist | regenerate | transform")->capture_default_str();
  grow_cmd->add_option("--transform-to", grow.transform_to, "Target sample for --task transform");
  grow_cmd->add_option("--steps", grow.steps, "Rollout steps (default eval.steps)");
  grow_cmd->add_option("--warmup", grow.warmup, "Grow steps before persist/regenerate/transform (default --steps)");
  grow_cmd->add_option("--stride", grow.stride, "Steps between frames")->capture_default_str();
  grow_cmd->add_option("--damage-radius", grow.damage_radius)->capture_default_str();
  grow_cmd->add_option("--seed", grow.seed, "Disc placement and update-mask seed");
  grow_flags.attach(*grow_cmd, {"step", "eval"});

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the session service");
  serve_cmd->add_option("--checkpoints", serve.checkpoints, "Directory of *.ckpt files")->capture_default_str();
  serve_cmd->add_option("--data", serve.data, "Dataset directory whose samples sessions may start from");
  serve_cmd->add_option("--host", serve.host)->capture_default_str();
  serve_cmd->add_option("--port", serve.port, "0 picks a free port")->capture_default_str();
  serve_cmd->add_option("--max-rate", serve.max_rate, "Steps per second cap per session")->capture_default_str();
  serve_cmd->add_option("--max-sessions", serve.max_sessions)->capture_default_str();
  serve_cmd->add_option("--threads", serve.threads)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train_args, train_flags);
    if (*eval_cmd) return run_eval(eval_args, eval_flags);
    if (*grow_cmd) return run_grow(grow, grow_flags);
    if (*serve_cmd) return run_serve(serve);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "invalid settings: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const EnvironmentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 1;
  } catch (const std::system_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

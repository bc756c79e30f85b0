#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "nca/ca_step.hpp"
#include "nca/data_io.hpp"
#include "nca/trainer.hpp"

namespace nca::session {

inline constexpr const char* kServiceVersion = "0.1.0";
inline constexpr int kProtocolVersion = 1;

/// Rejected command or undecodable message. `code` is one of
/// bad_request, unknown_command, unknown_session, out_of_bounds,
/// invalid_argument, bad_checkpoint, unknown_sample, limit, bad_frame.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(std::string code, const std::string& message) : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// Per-cell byte: bit 7 legal, bit 6 alive, bits 3-5 alpha quantized to
/// eighths of [0, 1], bits 0-2 argmax class (0 for dead cells).
struct CellByte {
  bool legal = false;
  bool alive = false;
  int alpha = 0;  ///< 0..7
  int cls = 0;    ///< 0..7

  std::uint8_t pack() const;
  static CellByte unpack(std::uint8_t b);
  bool operator==(const CellByte&) const = default;
};

struct Frame {
  std::uint32_t session = 0;
  std::uint64_t seq = 0;
  std::uint64_t step = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;  ///< row-major CellByte values

  bool operator==(const Frame&) const = default;
};

Frame make_frame(const CellGrid& grid, const BoolGrid& legality, double alive_threshold, std::uint32_t session,
                 std::uint64_t seq, std::uint64_t step);

/// Binary frame message, little-endian:
///
///   0  magic     "NCAF"
///   4  version   u8 (1)
///   5  encoding  u8 (0 raw: h*w cell bytes; 1 rle: runs of u16 count, u8 cell byte)
///   6  height    u16
///   8  width     u16
///  10  reserved  u16 (0)
///  12  session   u32
///  16  seq       u64
///  24  step      u64
///  32  payload
///
/// The encoder picks RLE only when it is smaller than the raw payload.
inline constexpr std::size_t kFrameHeaderBytes = 32;
enum class FrameEncoding : std::uint8_t { raw = 0, rle = 1 };

std::vector<std::uint8_t> encode_frame(const Frame& frame);
std::vector<std::uint8_t> encode_frame(const Frame& frame, FrameEncoding encoding);
Frame decode_frame(std::span<const std::uint8_t> bytes);

/// Parameters a session runs with; read-only once loaded.
struct LoadedModel {
  std::string name;
  ModelConfig model;
  StepConfig step;
  ModelParams params;
};

/// Checkpoints (a directory of *.ckpt files, loaded on demand) and,
/// optionally, a dataset whose samples sessions can start from.
class Catalog {
 public:
  explicit Catalog(std::filesystem::path checkpoint_dir = {}, std::shared_ptr<const Dataset> dataset = nullptr);

  std::vector<std::string> checkpoints() const;
  std::shared_ptr<const LoadedModel> model(const std::string& name);
  void add_model(LoadedModel model);

  /// Sample ids are "<location>/<timestamp>".
  std::vector<std::string> samples() const;
  const MapSample* sample(const std::string& id) const;
  const ClassLegend& legend() const { return legend_; }

 private:
  std::filesystem::path dir_;
  std::shared_ptr<const Dataset> dataset_;
  ClassLegend legend_ = ClassLegend::standard();
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const LoadedModel>> models_;
};

/// One frame to deliver; `forced` frames ignore the subscription stride.
struct Event {
  Frame frame;
  bool forced = false;
};

enum class Playback { paused, running };

/// A live automaton. Not thread-safe by itself; Registry serializes access.
class Session {
 public:
  Session(std::uint32_t id, std::shared_ptr<const LoadedModel> model);

  /// Grow-mode start on a sample: pre-explored disc from `seed`.
  void start_from_sample(const MapSample& sample, std::uint64_t seed);
  /// All-legal map with a single living cell at a position drawn from `seed`.
  void start_blank(int height, int width, std::uint64_t seed);
  /// Single living cell at (row, col) on the current legality; clears induction.
  void start_at(int row, int col);

  /// Applies one command (already known to target this session). Throws
  /// ProtocolError and leaves the session untouched on invalid input.
  nlohmann::json apply(const nlohmann::json& command, std::vector<Event>& events, const Catalog& catalog,
                       double max_rate);

  /// Runs `count` steps; frames every `stride` steps and after the last one.
  void advance(std::uint64_t count, std::vector<Event>& events, bool final_frame);

  Frame frame() const;

  /// Emit a frame for every step regardless of stride (headless replay).
  void set_emit_every_step(bool on) { every_step_ = on; }

  std::uint32_t id() const { return id_; }
  std::uint64_t step_count() const { return step_; }
  std::uint64_t seq() const { return seq_; }
  Playback playback() const { return playback_; }
  double rate() const { return rate_; }
  int stride() const { return stride_; }
  const CellGrid& grid() const { return grid_; }
  const BoolGrid& legality() const { return legality_; }
  const InductionField& field() const { return field_; }
  const StepConfig& config() const { return cfg_; }
  const LoadedModel& model() const { return *model_; }
  nlohmann::json describe() const;

 private:
  void mutated(std::vector<Event>& events);

  std::uint32_t id_;
  std::shared_ptr<const LoadedModel> model_;
  StepConfig cfg_;
  CellGrid grid_;
  BoolGrid legality_;
  InductionField field_;
  Rng rng_;
  std::uint64_t step_ = 0;
  std::uint64_t seq_ = 0;
  Playback playback_ = Playback::paused;
  double rate_ = 0;
  int stride_ = 1;
  bool every_step_ = false;
};

struct Result {
  nlohmann::json reply;
  std::vector<Event> events;
  std::uint32_t session = 0;  ///< session the command addressed (0 if none)
  bool closed = false;        ///< the session no longer exists
};

/// Thread-safe set of sessions. Commands on one session are applied one at
/// a time in call order; different sessions proceed independently.
class Registry {
 public:
  static constexpr double kDefaultMaxRate = 30.0;
  static constexpr std::uint64_t kMaxStepsPerCommand = 100000;

  explicit Registry(Catalog& catalog, double max_rate = kDefaultMaxRate, std::size_t max_sessions = 64);

  /// Executes one JSON command. Never throws: failures become error replies.
  Result execute(const nlohmann::json& command);
  Result execute_text(const std::string& text);

  /// One playback step for a running session (no-op when paused or gone).
  Result tick(std::uint32_t id);

  /// Steps a session, running or not, until its counter reaches `step`.
  Result advance_to(std::uint32_t id, std::uint64_t step);

  std::shared_ptr<Session> find(std::uint32_t id) const;
  std::vector<std::uint32_t> ids() const;
  /// Applies to sessions created afterwards.
  void set_emit_every_step(bool on) { every_step_ = on; }
  double max_rate() const { return max_rate_; }

 private:
  struct Entry {
    std::mutex mutex;
    std::shared_ptr<Session> session;
  };

  Result create(const nlohmann::json& command);
  std::shared_ptr<Entry> entry(std::uint32_t id) const;

  Catalog& catalog_;
  double max_rate_;
  std::size_t max_sessions_;
  mutable std::mutex mutex_;
  std::map<std::uint32_t, std::shared_ptr<Entry>> sessions_;
  std::uint32_t next_id_ = 1;
  bool every_step_ = false;
};

/// One acknowledged command and the step counter it was applied at.
struct JournalEntry {
  nlohmann::json command;
  std::uint64_t at_step = 0;
};

/// Re-applies a journal on a fresh registry: before each command its session
/// is advanced (as if playing) to the recorded step. Returns a frame for
/// every state the sessions passed through, in order.
std::vector<Frame> replay_journal(Registry& registry, const std::vector<JournalEntry>& journal);

}  // namespace nca::session

#include "nca/session.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nca/checkpoint.hpp"
#include "nca/config.hpp"

namespace nca::session {

using nlohmann::json;

std::uint8_t CellByte::pack() const {
  return std::uint8_t((legal ? 0x80 : 0) | (alive ? 0x40 : 0) | ((alpha & 7) << 3) | (cls & 7));
}

CellByte CellByte::unpack(std::uint8_t b) {
  return {(b & 0x80) != 0, (b & 0x40) != 0, (b >> 3) & 7, b & 7};
}

Frame make_frame(const CellGrid& grid, const BoolGrid& legality, double alive_threshold, std::uint32_t session,
                 std::uint64_t seq, std::uint64_t step) {
  require(legality.matches(grid), "make_frame: legality shape mismatch");
  const int k = grid.layout().k;
  require(k <= 8, "make_frame: at most 8 classes fit the cell byte");
  Frame f;
  f.session = session;
  f.seq = seq;
  f.step = step;
  f.height = grid.height();
  f.width = grid.width();
  f.cells.reserve(grid.cells());
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      CellByte b;
      b.legal = legality(r, c);
      if (b.legal) {
        const double a = grid.alpha(r, c);
        b.alive = a > alive_threshold;
        b.alpha = std::clamp(int(std::floor(std::clamp(a, 0.0, 1.0) * 8)), 0, 7);
        if (b.alive) {
          auto cell = grid.cell(r, c);
          b.cls = int(std::max_element(cell.begin(), cell.begin() + k) - cell.begin());
        }
      }
      f.cells.push_back(b.pack());
    }
  }
  return f;
}

namespace {

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
}
void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}
void put64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}
std::uint64_t get(std::span<const std::uint8_t> b, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(b[at + std::size_t(i)]) << (8 * i);
  return v;
}

std::size_t rle_size(const std::vector<std::uint8_t>& cells) {
  std::size_t runs = 0;
  for (std::size_t i = 0; i < cells.size();) {
    std::size_t j = i + 1;
    while (j < cells.size() && cells[j] == cells[i] && j - i < 0xFFFF) ++j;
    ++runs;
    i = j;
  }
  return runs * 3;
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  return encode_frame(frame, rle_size(frame.cells) < frame.cells.size() ? FrameEncoding::rle : FrameEncoding::raw);
}

std::vector<std::uint8_t> encode_frame(const Frame& frame, FrameEncoding encoding) {
  require(frame.height >= 0 && frame.width >= 0 && frame.height <= 0xFFFF && frame.width <= 0xFFFF,
          "encode_frame: dimensions out of range");
  require(frame.cells.size() == std::size_t(frame.height) * std::size_t(frame.width),
          "encode_frame: cell count != height * width");
  std::vector<std::uint8_t> out{'N', 'C', 'A', 'F', std::uint8_t(kProtocolVersion), std::uint8_t(encoding)};
  put16(out, std::uint16_t(frame.height));
  put16(out, std::uint16_t(frame.width));
  put16(out, 0);
  put32(out, frame.session);
  put64(out, frame.seq);
  put64(out, frame.step);
  if (encoding == FrameEncoding::raw) {
    out.insert(out.end(), frame.cells.begin(), frame.cells.end());
    return out;
  }
  const auto& cells = frame.cells;
  for (std::size_t i = 0; i < cells.size();) {
    std::size_t j = i + 1;
    while (j < cells.size() && cells[j] == cells[i] && j - i < 0xFFFF) ++j;
    put16(out, std::uint16_t(j - i));
    out.push_back(cells[i]);
    i = j;
  }
  return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderBytes || std::memcmp(bytes.data(), "NCAF", 4) != 0)
    throw ProtocolError("bad_frame", "frame: missing header");
  if (bytes[4] != kProtocolVersion) throw ProtocolError("bad_frame", "frame: unsupported version");
  const std::uint8_t encoding = bytes[5];
  Frame f;
  f.height = int(get(bytes, 6, 2));
  f.width = int(get(bytes, 8, 2));
  f.session = std::uint32_t(get(bytes, 12, 4));
  f.seq = get(bytes, 16, 8);
  f.step = get(bytes, 24, 8);
  const std::size_t cells = std::size_t(f.height) * std::size_t(f.width);
  auto payload = bytes.subspan(kFrameHeaderBytes);
  if (encoding == std::uint8_t(FrameEncoding::raw)) {
    if (payload.size() != cells) throw ProtocolError("bad_frame", "frame: raw payload size mismatch");
    f.cells.assign(payload.begin(), payload.end());
  } else if (encoding == std::uint8_t(FrameEncoding::rle)) {
    if (payload.size() % 3 != 0) throw ProtocolError("bad_frame", "frame: truncated run");
    f.cells.reserve(cells);
    for (std::size_t i = 0; i < payload.size(); i += 3) {
      const auto count = std::size_t(get(payload, i, 2));
      if (count == 0 || f.cells.size() + count > cells) throw ProtocolError("bad_frame", "frame: bad run length");
      f.cells.insert(f.cells.end(), count, payload[i + 2]);
    }
    if (f.cells.size() != cells) throw ProtocolError("bad_frame", "frame: runs do not cover the grid");
  } else {
    throw ProtocolError("bad_frame", "frame: unknown encoding");
  }
  return f;
}

Catalog::Catalog(std::filesystem::path checkpoint_dir, std::shared_ptr<const Dataset> dataset)
    : dir_(std::move(checkpoint_dir)), dataset_(std::move(dataset)) {
  if (dataset_) legend_ = dataset_->manifest.legend;
}

std::vector<std::string> Catalog::checkpoints() const {
  std::vector<std::string> names;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [name, model] : models_) names.push_back(name);
  }
  std::error_code ec;
  if (!dir_.empty() && std::filesystem::is_directory(dir_, ec)) {
    for (const auto& entry : std::filesystem::directory_iterator(dir_, ec))
      if (entry.is_regular_file() && entry.path().extension() == ".ckpt") names.push_back(entry.path().filename());
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

std::shared_ptr<const LoadedModel> Catalog::model(const std::string& name) {
  {
    std::lock_guard lock(mutex_);
    auto it = models_.find(name);
    if (it != models_.end()) return it->second;
  }
  if (name.empty() || name.find('/') != std::string::npos || name.find('\\') != std::string::npos ||
      name.find("..") != std::string::npos || dir_.empty())
    throw ProtocolError("bad_checkpoint", "unknown checkpoint '" + name + "'");
  TrainerState state;
  try {
    state = load_checkpoint(dir_ / name);
  } catch (const std::exception& e) {
    throw ProtocolError("bad_checkpoint", e.what());
  }
  auto loaded = std::make_shared<LoadedModel>();
  loaded->name = name;
  loaded->model = state.model;
  loaded->step = state.step;
  loaded->params = std::move(state.params);
  std::lock_guard lock(mutex_);
  return models_.emplace(name, std::move(loaded)).first->second;
}

void Catalog::add_model(LoadedModel model) {
  std::lock_guard lock(mutex_);
  auto name = model.name;
  models_[name] = std::make_shared<const LoadedModel>(std::move(model));
}

std::vector<std::string> Catalog::samples() const {
  std::vector<std::string> ids;
  if (dataset_)
    for (const auto& s : dataset_->samples) ids.push_back(s.location + "/" + s.timestamp);
  return ids;
}

const MapSample* Catalog::sample(const std::string& id) const {
  if (!dataset_) return nullptr;
  for (const auto& s : dataset_->samples)
    if (s.location + "/" + s.timestamp == id) return &s;
  return nullptr;
}

namespace {

constexpr std::uint64_t kSessionStream = 0x5e55;

const json& require_field(const json& cmd, const char* key) {
  auto it = cmd.find(key);
  if (it == cmd.end()) throw ProtocolError("bad_request", std::string("missing field '") + key + "'");
  return *it;
}

double number(const json& cmd, const char* key) {
  const json& v = require_field(cmd, key);
  if (!v.is_number()) throw ProtocolError("bad_request", std::string("field '") + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ProtocolError("invalid_argument", std::string("field '") + key + "' must be finite");
  return d;
}

std::int64_t integer(const json& cmd, const char* key) {
  const json& v = require_field(cmd, key);
  if (!v.is_number_integer()) throw ProtocolError("bad_request", std::string("field '") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

std::uint64_t seed_of(const json& cmd) {
  auto it = cmd.find("seed");
  if (it == cmd.end()) return 0;
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
    throw ProtocolError("bad_request", "field 'seed' must be a non-negative integer");
  return it->get<std::uint64_t>();
}

std::pair<int, int> cell_of(const json& cmd, const char* key) {
  const json& v = require_field(cmd, key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
    throw ProtocolError("bad_request", std::string("field '") + key + "' must be [row, col]");
  return {v[0].get<int>(), v[1].get<int>()};
}

}  // namespace

Session::Session(std::uint32_t id, std::shared_ptr<const LoadedModel> model)
    : id_(id), model_(std::move(model)), cfg_(model_->step) {}

void Session::start_from_sample(const MapSample& sample, std::uint64_t seed) {
  const auto target = TrainTarget::from_sample(sample, model_->model.layout.k);
  rng_ = Rng(derive_seed(seed, kSessionStream));
  const Disc disc = sample_disc_placement(rng_, sample.height, sample.width, 0.5);
  grid_ = grow_state(target, disc, model_->model.layout);
  legality_ = target.legality;
  field_ = make_induction(target, disc, model_->model.layout.k);
  step_ = 0;
}

void Session::start_blank(int height, int width, std::uint64_t seed) {
  legality_ = BoolGrid(height, width, true);
  field_ = InductionField(height, width, model_->model.layout.k);
  rng_ = Rng(derive_seed(seed, kSessionStream));
  grid_ = seed_configuration<float>(height, width, model_->model.layout, rng_);
  step_ = 0;
}

void Session::start_at(int row, int col) {
  grid_ = seed_configuration<float>(legality_.height(), legality_.width(), model_->model.layout, row, col);
  field_ = InductionField(legality_.height(), legality_.width(), model_->model.layout.k);
  step_ = 0;
}

Frame Session::frame() const { return make_frame(grid_, legality_, cfg_.alive_threshold, id_, seq_, step_); }

json Session::describe() const {
  return {{"session", id_},
          {"checkpoint", model_->name},
          {"height", grid_.height()},
          {"width", grid_.width()},
          {"k", model_->model.layout.k},
          {"n", model_->model.layout.n},
          {"step", step_},
          {"seq", seq_},
          {"playing", playback_ == Playback::running},
          {"rate", rate_},
          {"stride", stride_},
          {"config", to_json(cfg_)}};
}

void Session::mutated(std::vector<Event>& events) {
  ++seq_;
  events.push_back({frame(), true});
}

void Session::advance(std::uint64_t count, std::vector<Event>& events, bool final_frame) {
  const InductionField* forcing = field_.empty() ? nullptr : &field_;
  for (std::uint64_t i = 0; i < count; ++i) {
    grid_ = nca::step(grid_, model_->params, cfg_, legality_, forcing, rng_);
    ++step_;
    ++seq_;
    const bool last = i + 1 == count;
    if (every_step_ || step_ % std::uint64_t(stride_) == 0)
      events.push_back({frame(), false});
    else if (last && final_frame)
      events.push_back({frame(), true});
  }
}

json Session::apply(const json& cmd, std::vector<Event>& events, const Catalog& catalog, double max_rate) {
  const std::string name = cmd.at("cmd").get<std::string>();
  const std::uint64_t before = step_;
  json reply = {{"type", "ack"}, {"cmd", name}, {"session", id_}, {"at_step", before}};
  const int h = grid_.height();
  const int w = grid_.width();

  if (name == "step") {
    const std::int64_t count = integer(cmd, "count");
    if (count < 0) throw ProtocolError("invalid_argument", "step count must be >= 0");
    if (std::uint64_t(count) > Registry::kMaxStepsPerCommand) throw ProtocolError("limit", "step count too large");
    advance(std::uint64_t(count), events, true);
  } else if (name == "play") {
    const double rate = cmd.contains("rate") ? number(cmd, "rate") : max_rate;
    if (rate <= 0) throw ProtocolError("invalid_argument", "play rate must be > 0");
    rate_ = std::min(rate, max_rate);
    playback_ = Playback::running;
    reply["rate"] = rate_;
  } else if (name == "pause") {
    playback_ = Playback::paused;
  } else if (name == "brush_damage") {
    const auto [r, c] = cell_of(cmd, "center");
    const double radius = number(cmd, "radius");
    if (!grid_.in_bounds(r, c)) throw ProtocolError("out_of_bounds", "brush center outside the grid");
    if (radius < 0) throw ProtocolError("invalid_argument", "brush radius must be >= 0");
    apply_damage(grid_, r, c, radius);
    mutated(events);
  } else if (name == "brush_induce") {
    const auto [r, c] = cell_of(cmd, "center");
    const double radius = number(cmd, "radius");
    if (!grid_.in_bounds(r, c)) throw ProtocolError("out_of_bounds", "brush center outside the grid");
    if (radius < 0) throw ProtocolError("invalid_argument", "brush radius must be >= 0");
    const int k = model_->model.layout.k;
    if (radius == 0) {
      field_ = InductionField(h, w, k);
    } else {
      const std::int64_t cls = integer(cmd, "class");
      if (cls < 0 || cls >= k) throw ProtocolError("invalid_argument", "class must be in [0, k)");
      std::optional<float> strength;
      if (cmd.contains("concentration")) {
        const double conc = number(cmd, "concentration");
        if (conc < 0) throw ProtocolError("invalid_argument", "concentration must be >= 0");
        strength = float(conc);
      }
      std::vector<float> onehot(std::size_t(k), 0.0f);
      onehot[std::size_t(cls)] = 1.0f;
      const BoolGrid disc = disc_mask(h, w, r, c, radius, true);
      for (int rr = 0; rr < h; ++rr)
        for (int cc = 0; cc < w; ++cc)
          if (disc(rr, cc) && legality_(rr, cc)) field_.set(rr, cc, onehot, strength);
    }
    mutated(events);
  } else if (name == "clear_induction") {
    field_ = InductionField(h, w, model_->model.layout.k);
    mutated(events);
  } else if (name == "set_config") {
    StepConfig next = cfg_;
    try {
      merge(next, require_field(cmd, "config"));
      next.validate();
    } catch (const ConfigError& e) {
      throw ProtocolError("bad_request", e.what());
    } catch (const ContractViolation& e) {
      throw ProtocolError("invalid_argument", e.what());
    }
    cfg_ = next;
    reply["config"] = to_json(cfg_);
    mutated(events);
  } else if (name == "subscribe") {
    const std::int64_t stride = cmd.contains("stride") ? integer(cmd, "stride") : 1;
    if (stride < 1 || stride > 1000000) throw ProtocolError("invalid_argument", "stride must be >= 1");
    stride_ = int(stride);
    events.push_back({frame(), true});
  } else if (name == "frame") {
    events.push_back({frame(), true});
  } else if (name == "describe") {
    reply["state"] = describe();
  } else if (name == "reset") {
    if (cmd.contains("sample")) {
      const json& id = require_field(cmd, "sample");
      if (!id.is_string()) throw ProtocolError("bad_request", "field 'sample' must be a string");
      const MapSample* sample = catalog.sample(id.get<std::string>());
      if (!sample) throw ProtocolError("unknown_sample", "unknown sample '" + id.get<std::string>() + "'");
      start_from_sample(*sample, seed_of(cmd));
    } else if (cmd.contains("position")) {
      const auto [r, c] = cell_of(cmd, "position");
      if (!grid_.in_bounds(r, c)) throw ProtocolError("out_of_bounds", "position outside the grid");
      if (!legality_(r, c)) throw ProtocolError("invalid_argument", "position is not a legal cell");
      start_at(r, c);
    } else {
      std::vector<int> legal;
      for (int i = 0; i < h * w; ++i)
        if (legality_(i / w, i % w)) legal.push_back(i);
      if (legal.empty()) throw ProtocolError("invalid_argument", "map has no legal cell");
      Rng pick(derive_seed(seed_of(cmd), kSessionStream));
      const int at = legal[std::size_t(uniform_index(pick, legal.size()))];
      rng_ = pick;
      start_at(at / w, at % w);
    }
    mutated(events);
  } else {
    throw ProtocolError("unknown_command", "unknown command '" + name + "'");
  }
  reply["step"] = step_;
  reply["seq"] = seq_;
  return reply;
}

Registry::Registry(Catalog& catalog, double max_rate, std::size_t max_sessions)
    : catalog_(catalog), max_rate_(max_rate), max_sessions_(max_sessions) {}

std::shared_ptr<Registry::Entry> Registry::entry(std::uint32_t id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::shared_ptr<Session> Registry::find(std::uint32_t id) const {
  auto e = entry(id);
  return e ? e->session : nullptr;
}

std::vector<std::uint32_t> Registry::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::uint32_t> out;
  for (const auto& [id, e] : sessions_) out.push_back(id);
  return out;
}

Result Registry::create(const json& cmd) {
  const json& name = require_field(cmd, "checkpoint");
  if (!name.is_string()) throw ProtocolError("bad_request", "field 'checkpoint' must be a string");
  auto model = catalog_.model(name.get<std::string>());
  const std::uint64_t seed = seed_of(cmd);

  std::uint32_t id;
  {
    std::lock_guard lock(mutex_);
    if (sessions_.size() >= max_sessions_) throw ProtocolError("limit", "too many sessions");
    id = next_id_;
  }
  auto session = std::make_shared<Session>(id, model);
  session->set_emit_every_step(every_step_);
  if (cmd.contains("sample")) {
    const json& sid = require_field(cmd, "sample");
    if (!sid.is_string()) throw ProtocolError("bad_request", "field 'sample' must be a string");
    const MapSample* sample = catalog_.sample(sid.get<std::string>());
    if (!sample) throw ProtocolError("unknown_sample", "unknown sample '" + sid.get<std::string>() + "'");
    session->start_from_sample(*sample, seed);
  } else {
    int height = 80;
    int width = 80;
    if (cmd.contains("blank")) {
      const json& b = cmd.at("blank");
      if (!b.is_object()) throw ProtocolError("bad_request", "field 'blank' must be an object");
      if (b.contains("height")) height = int(integer(b, "height"));
      if (b.contains("width")) width = int(integer(b, "width"));
    }
    if (height < 1 || width < 1 || height > 1024 || width > 1024)
      throw ProtocolError("invalid_argument", "blank map size must be in [1, 1024]");
    session->start_blank(height, width, seed);
  }

  Result result;
  {
    std::lock_guard lock(mutex_);
    if (sessions_.size() >= max_sessions_) throw ProtocolError("limit", "too many sessions");
    id = next_id_++;
    auto e = std::make_shared<Entry>();
    e->session = session;
    sessions_[id] = e;
  }
  result.session = id;
  result.events.push_back({session->frame(), true});
  result.reply = {{"type", "ack"}, {"cmd", "create"}, {"session", id}, {"at_step", 0}, {"step", 0}, {"seq", 0}};
  result.reply["state"] = session->describe();
  return result;
}

Result Registry::execute_text(const std::string& text) {
  json cmd;
  try {
    cmd = json::parse(text);
  } catch (const json::parse_error& e) {
    Result r;
    r.reply = {{"type", "error"}, {"code", "bad_request"}, {"message", std::string("malformed JSON: ") + e.what()}};
    return r;
  }
  return execute(cmd);
}

Result Registry::execute(const json& cmd) {
  Result result;
  json id = nullptr;
  std::string name;
  try {
    if (!cmd.is_object()) throw ProtocolError("bad_request", "command must be a JSON object");
    if (cmd.contains("id")) id = cmd.at("id");
    const json& c = require_field(cmd, "cmd");
    if (!c.is_string()) throw ProtocolError("bad_request", "field 'cmd' must be a string");
    name = c.get<std::string>();

    if (name == "hello") {
      result.reply = {{"type", "ack"},
                      {"cmd", "hello"},
                      {"version", kServiceVersion},
                      {"protocol", kProtocolVersion},
                      {"max_rate", max_rate_},
                      {"legend", catalog_.legend().to_json()},
                      {"checkpoints", catalog_.checkpoints()},
                      {"samples", catalog_.samples()}};
    } else if (name == "create") {
      result = create(cmd);
    } else {
      if (name != "step" && name != "play" && name != "pause" && name != "brush_damage" && name != "brush_induce" &&
          name != "clear_induction" && name != "set_config" && name != "subscribe" && name != "frame" &&
          name != "describe" && name != "reset" && name != "close")
        throw ProtocolError("unknown_command", "unknown command '" + name + "'");
      const std::int64_t sid = integer(cmd, "session");
      auto e = sid > 0 && sid <= 0xFFFFFFFF ? entry(std::uint32_t(sid)) : nullptr;
      if (!e) throw ProtocolError("unknown_session", "no session " + std::to_string(sid));
      result.session = std::uint32_t(sid);
      std::lock_guard lock(e->mutex);
      if (name == "close") {
        {
          std::lock_guard registry_lock(mutex_);
          sessions_.erase(std::uint32_t(sid));
        }
        result.closed = true;
        result.reply = {{"type", "ack"}, {"cmd", "close"}, {"session", sid}, {"at_step", e->session->step_count()}};
      } else {
        result.reply = e->session->apply(cmd, result.events, catalog_, max_rate_);
      }
    }
  } catch (const ProtocolError& err) {
    result.events.clear();
    result.reply = {{"type", "error"}, {"code", err.code()}, {"message", err.what()}};
    if (!name.empty()) result.reply["cmd"] = name;
  } catch (const std::exception& err) {
    result.events.clear();
    result.reply = {{"type", "error"}, {"code", "bad_request"}, {"message", err.what()}};
    if (!name.empty()) result.reply["cmd"] = name;
  }
  if (!id.is_null()) result.reply["id"] = id;
  return result;
}

Result Registry::tick(std::uint32_t id) {
  Result result;
  result.session = id;
  auto e = entry(id);
  if (!e) {
    result.closed = true;
    return result;
  }
  std::lock_guard lock(e->mutex);
  if (e->session->playback() == Playback::running) e->session->advance(1, result.events, false);
  return result;
}

Result Registry::advance_to(std::uint32_t id, std::uint64_t step) {
  Result result;
  result.session = id;
  auto e = entry(id);
  if (!e) throw ProtocolError("unknown_session", "no session " + std::to_string(id));
  std::lock_guard lock(e->mutex);
  const std::uint64_t now = e->session->step_count();
  if (now > step) throw ProtocolError("invalid_argument", "session is already past step " + std::to_string(step));
  e->session->advance(step - now, result.events, false);
  return result;
}

std::vector<Frame> replay_journal(Registry& registry, const std::vector<JournalEntry>& journal) {
  registry.set_emit_every_step(true);
  std::vector<Frame> frames;
  for (const auto& entry : journal) {
    if (entry.command.contains("session") && entry.command.at("session").is_number_integer()) {
      const auto id = entry.command.at("session").get<std::uint32_t>();
      if (registry.find(id)) {
        auto advanced = registry.advance_to(id, entry.at_step);
        for (auto& e : advanced.events) frames.push_back(std::move(e.frame));
      }
    }
    auto result = registry.execute(entry.command);
    if (result.reply.value("type", "") == "error")
      throw ProtocolError(result.reply.value("code", "bad_request"),
                          "journal replay failed: " + result.reply.value("message", ""));
    for (auto& e : result.events) frames.push_back(std::move(e.frame));
  }
  return frames;
}

}  // namespace nca::session

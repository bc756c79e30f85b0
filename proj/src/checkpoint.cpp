#include "nca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <zlib.h>

#include "nca/config.hpp"

namespace nca {

using nlohmann::json;

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = uInt(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return std::uint32_t(crc);
}

namespace {

constexpr char kMagic[8] = {'N', 'C', 'A', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void f32s(const std::vector<float>& v) {
    for (float x : v) f32(x);
  }
  void f64s(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[std::size_t(i)]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[std::size_t(i)]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return std::bit_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint truncated in " + what_);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::vector<float> f32s(std::size_t n) {
    if (n > (bytes_.size() - pos_) / 4) throw CheckpointError("checkpoint truncated in " + what_);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  std::vector<double> f64s(std::size_t n) {
    if (n > (bytes_.size() - pos_) / 8) throw CheckpointError("checkpoint truncated in " + what_);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

struct Section {
  std::string tag;
  std::vector<std::uint8_t> payload;
};

std::vector<Section> build_sections(const TrainerState& s) {
  std::vector<Section> sections;

  {
    json conf = {{"model", to_json(s.model)},
                 {"step", to_json(s.step)},
                 {"train", to_json(s.train)},
                 {"epoch", s.epoch}};
    const std::string text = conf.dump();
    sections.push_back({"CONF", {text.begin(), text.end()}});
  }
  {
    Writer w;
    w.u32(std::uint32_t(s.params.input_dim));
    w.u32(std::uint32_t(s.params.hidden_dim));
    w.u32(std::uint32_t(s.params.output_dim));
    w.f32s(s.params.w1);
    w.f32s(s.params.b1);
    w.f32s(s.params.w2);
    w.f32s(s.params.b2);
    sections.push_back({"PARM", std::move(w.bytes())});
  }
  {
    Writer w;
    w.u64(s.adam.step);
    w.f64(s.adam.lr);
    w.f64(s.adam.beta1);
    w.f64(s.adam.beta2);
    w.f64(s.adam.eps);
    for (const auto* v : {&s.adam.m_w1, &s.adam.m_b1, &s.adam.m_w2, &s.adam.v_w1, &s.adam.v_b1, &s.adam.v_w2})
      w.f64s(*v);
    sections.push_back({"ADAM", std::move(w.bytes())});
  }
  {
    Writer w;
    const std::string text = save_rng(s.rng);
    w.u64(text.size());
    w.raw(text.data(), text.size());
    sections.push_back({"RNG_", std::move(w.bytes())});
  }
  {
    Writer w;
    w.u32(std::uint32_t(s.pool.size()));
    for (const auto& e : s.pool) {
      w.i32(e.target);
      w.u8(std::uint8_t(e.task));
      w.u8(e.seeded() ? 1 : 0);
      w.u64(e.age);
      w.f64(e.disc.center_r);
      w.f64(e.disc.center_c);
      w.i32(e.disc.diameter);
      if (e.seeded()) {
        w.u32(std::uint32_t(e.state.height()));
        w.u32(std::uint32_t(e.state.width()));
        w.u32(std::uint32_t(e.state.layout().k));
        w.u32(std::uint32_t(e.state.layout().n));
        for (float v : e.state.values()) w.f32(v);
      }
    }
    sections.push_back({"POOL", std::move(w.bytes())});
  }
  return sections;
}

std::string hex32(std::uint32_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(8) << std::setfill('0') << v;
  return out.str();
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainerState& state) {
  const auto sections = build_sections(state);
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(std::uint32_t(sections.size()));
  for (const auto& s : sections) {
    w.raw(s.tag.data(), 4);
    w.u64(s.payload.size());
    w.raw(s.payload.data(), s.payload.size());
    w.u32(crc32_of(s.payload));
  }
  w.u32(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

TrainerState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 12) throw CheckpointError("checkpoint too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  {
    Reader tail(bytes.subspan(bytes.size() - 4), "trailer");
    if (tail.u32() != crc32_of(bytes.first(bytes.size() - 4)))
      throw CheckpointError("checkpoint checksum mismatch (file corrupt)");
  }
  Reader r(bytes.first(bytes.size() - 4), "header");
  r.take(sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();

  std::vector<Section> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto tag = r.take(4);
    Section s{std::string(tag.begin(), tag.end()), {}};
    const std::uint64_t length = r.u64();
    auto payload = r.take(std::size_t(length));
    s.payload.assign(payload.begin(), payload.end());
    if (r.u32() != crc32_of(s.payload)) throw CheckpointError("checkpoint section " + s.tag + " is corrupt");
    sections.push_back(std::move(s));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint sections");
  auto find = [&](const std::string& tag) -> const std::vector<std::uint8_t>& {
    for (const auto& s : sections)
      if (s.tag == tag) return s.payload;
    throw CheckpointError("checkpoint lacks section " + tag);
  };

  TrainerState state;
  try {
    const auto& conf_bytes = find("CONF");
    const json conf = json::parse(conf_bytes.begin(), conf_bytes.end());
    merge(state.model, conf.at("model"));
    merge(state.step, conf.at("step"));
    merge(state.train, conf.at("train"));
    state.epoch = conf.at("epoch").get<long>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config unreadable: ") + e.what());
  }

  {
    Reader p(find("PARM"), "PARM");
    auto& m = state.params;
    m.input_dim = int(p.u32());
    m.hidden_dim = int(p.u32());
    m.output_dim = int(p.u32());
    m.w1 = p.f32s(std::size_t(m.input_dim) * std::size_t(m.hidden_dim));
    m.b1 = p.f32s(std::size_t(m.hidden_dim));
    m.w2 = p.f32s(std::size_t(m.hidden_dim) * std::size_t(m.output_dim));
    m.b2 = p.f32s(std::size_t(m.output_dim));
    if (!p.done()) throw CheckpointError("PARM section has trailing bytes");
  }
  {
    Reader a(find("ADAM"), "ADAM");
    auto& s = state.adam;
    s.step = a.u64();
    s.lr = a.f64();
    s.beta1 = a.f64();
    s.beta2 = a.f64();
    s.eps = a.f64();
    const auto& m = state.params;
    s.m_w1 = a.f64s(m.w1.size());
    s.m_b1 = a.f64s(m.b1.size());
    s.m_w2 = a.f64s(m.w2.size());
    s.v_w1 = a.f64s(m.w1.size());
    s.v_b1 = a.f64s(m.b1.size());
    s.v_w2 = a.f64s(m.w2.size());
    if (!a.done()) throw CheckpointError("ADAM section has trailing bytes");
  }
  {
    Reader g(find("RNG_"), "RNG_");
    const std::uint64_t length = g.u64();
    auto text = g.take(std::size_t(length));
    try {
      state.rng = load_rng(std::string(text.begin(), text.end()));
    } catch (const std::exception& e) {
      throw CheckpointError(std::string("checkpoint rng state: ") + e.what());
    }
  }
  {
    Reader p(find("POOL"), "POOL");
    const std::uint32_t count = p.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      PoolEntry e;
      e.target = p.i32();
      const std::uint8_t task = p.u8();
      if (task > 3) throw CheckpointError("POOL entry has an unknown task");
      e.task = Task(task);
      const bool seeded = p.u8() != 0;
      e.age = p.u64();
      e.disc.center_r = p.f64();
      e.disc.center_c = p.f64();
      e.disc.diameter = p.i32();
      if (seeded) {
        const int h = int(p.u32());
        const int w = int(p.u32());
        ChannelLayout layout;
        layout.k = int(p.u32());
        layout.n = int(p.u32());
        if (!(layout == state.model.layout) || h <= 0 || w <= 0 || h > 1 << 14 || w > 1 << 14)
          throw CheckpointError("POOL entry shape is inconsistent");
        e.state = CellGrid(h, w, layout);
        auto values = p.f32s(e.state.values().size());
        std::copy(values.begin(), values.end(), e.state.values().begin());
      }
      state.pool.push_back(std::move(e));
    }
    if (!p.done()) throw CheckpointError("POOL section has trailing bytes");
  }
  return state;
}

json checkpoint_summary(const TrainerState& state, std::span<const std::uint8_t> bytes) {
  json sections = json::array();
  for (const auto& s : build_sections(state))
    sections.push_back({{"tag", s.tag}, {"bytes", s.payload.size()}, {"crc32", hex32(crc32_of(s.payload))}});
  std::size_t seeded = 0;
  for (const auto& e : state.pool) seeded += e.seeded() ? 1 : 0;
  return {{"format", "nca-checkpoint"},
          {"version", kCheckpointVersion},
          {"epoch", state.epoch},
          {"layout", {{"k", state.model.layout.k}, {"n", state.model.layout.n}}},
          {"params",
           {{"w1", {state.params.input_dim, state.params.hidden_dim}},
            {"b1", {state.params.hidden_dim}},
            {"w2", {state.params.hidden_dim, state.params.output_dim}},
            {"b2", {state.params.output_dim}}}},
          {"pool", {{"entries", state.pool.size()}, {"seeded", seeded}}},
          {"sections", sections},
          {"file_bytes", bytes.size()},
          {"file_crc32", hex32(crc32_of(bytes))}};
}

void save_checkpoint(const std::filesystem::path& path, const TrainerState& state) {
  const auto bytes = encode_checkpoint(state);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto write = [](const std::filesystem::path& target, const void* data, std::size_t size) {
    auto tmp = target;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(static_cast<const char*>(data), std::streamsize(size));
      if (!out) throw std::runtime_error("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, target);
  };
  write(path, bytes.data(), bytes.size());
  const std::string summary = checkpoint_summary(state, bytes).dump(2) + "\n";
  auto sidecar = path;
  sidecar += ".json";
  write(sidecar, summary.data(), summary.size());
}

TrainerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace nca

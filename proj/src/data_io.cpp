#include "nca/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace nca {

using nlohmann::json;

namespace {

json rgb_to_json(Rgb c) { return json::array({c.r, c.g, c.b}); }

Rgb rgb_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw DataError("legend color must be an [r, g, b] triple");
  Rgb c;
  c.r = j.at(0).get<std::uint8_t>();
  c.g = j.at(1).get<std::uint8_t>();
  c.b = j.at(2).get<std::uint8_t>();
  return c;
}

int squared_distance(Rgb a, Rgb b) {
  const int dr = int(a.r) - int(b.r);
  const int dg = int(a.g) - int(b.g);
  const int db = int(a.b) - int(b.b);
  return dr * dr + dg * dg + db * db;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
      throw DataError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Legend

ClassLegend ClassLegend::standard() {
  ClassLegend legend;
  legend.names = {"unobstructed", "slight", "moderate", "severe"};
  legend.colors = {{52, 168, 83}, {251, 188, 5}, {255, 112, 0}, {223, 32, 32}};
  legend.sources = {{{128, 0, 128}, 3}};
  legend.background = {255, 255, 255};
  legend.dead = {150, 150, 150};
  return legend;
}

void ClassLegend::validate() const {
  if (colors.empty() || colors.size() > 8) throw DataError("legend: need between 1 and 8 classes");
  if (names.size() != colors.size()) throw DataError("legend: one name per class color required");
  std::vector<Rgb> all = colors;
  for (const auto& s : sources) {
    if (s.cls < 0 || s.cls >= k()) throw DataError("legend: source color maps to an unknown class");
    all.push_back(s.color);
  }
  all.push_back(background);
  all.push_back(dead);
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j)
      if (all[i] == all[j]) throw DataError("legend: colors must be pairwise distinct");
}

json ClassLegend::to_json() const {
  json classes = json::array();
  for (std::size_t i = 0; i < colors.size(); ++i) classes.push_back({{"name", names[i]}, {"rgb", rgb_to_json(colors[i])}});
  json merged = json::array();
  for (const auto& s : sources) merged.push_back({{"rgb", rgb_to_json(s.color)}, {"class", s.cls}});
  return {{"classes", classes},
          {"merged_sources", merged},
          {"background", rgb_to_json(background)},
          {"dead", rgb_to_json(dead)}};
}

ClassLegend ClassLegend::from_json(const json& j) {
  reject_unknown_keys(j, {"classes", "merged_sources", "background", "dead"}, "legend");
  ClassLegend legend;
  for (const auto& c : j.at("classes")) {
    reject_unknown_keys(c, {"name", "rgb"}, "legend class");
    legend.names.push_back(c.at("name").get<std::string>());
    legend.colors.push_back(rgb_from_json(c.at("rgb")));
  }
  if (j.contains("merged_sources"))
    for (const auto& s : j.at("merged_sources")) {
      reject_unknown_keys(s, {"rgb", "class"}, "legend source");
      legend.sources.push_back({rgb_from_json(s.at("rgb")), s.at("class").get<int>()});
    }
  legend.background = rgb_from_json(j.at("background"));
  legend.dead = rgb_from_json(j.at("dead"));
  legend.validate();
  return legend;
}

// ---------------------------------------------------------------------------
// Images

Image::Image(int w, int h, Rgb fill) : width(w), height(h), rgb(std::size_t(w) * std::size_t(h) * 3) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill.r;
    rgb[i + 1] = fill.g;
    rgb[i + 2] = fill.b;
  }
}

Rgb Image::pixel(int r, int c) const {
  const std::size_t i = (std::size_t(r) * std::size_t(width) + std::size_t(c)) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void Image::set(int r, int c, Rgb color) {
  const std::size_t i = (std::size_t(r) * std::size_t(width) + std::size_t(c)) * 3;
  rgb[i] = color.r;
  rgb[i + 1] = color.g;
  rgb[i + 2] = color.b;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.rgb.begin(), image.rgb.end());
  return bytes;
}

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw DataError("ppm: malformed header");
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1 << 20) throw DataError("ppm: dimension too large");
      ++pos;
    }
    return int(value);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw DataError("ppm: not a binary P6 image");
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw DataError("ppm: only 8-bit images are supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw DataError("ppm: malformed header");
  ++pos;
  const std::size_t payload = std::size_t(w) * std::size_t(h) * 3;
  if (bytes.size() - pos < payload) throw DataError("ppm: truncated pixel data");
  Image image;
  image.width = w;
  image.height = h;
  image.rgb.assign(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + payload));
  return image;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("cannot write image " + path.string());
}

// ---------------------------------------------------------------------------
// Map codec

MapSample decode_map(const Image& image, const ClassLegend& legend, int expected_height, int expected_width) {
  if (image.height != expected_height || image.width != expected_width)
    throw DataError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) + ", expected " +
                    std::to_string(expected_width) + "x" + std::to_string(expected_height));
  struct Entry {
    Rgb color;
    std::int8_t cls;
  };
  std::vector<Entry> palette;
  for (int j = 0; j < legend.k(); ++j) palette.push_back({legend.colors[std::size_t(j)], std::int8_t(j)});
  for (const auto& s : legend.sources) palette.push_back({s.color, std::int8_t(s.cls)});
  palette.push_back({legend.background, kBackground});

  MapSample sample(image.height, image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const Rgb px = image.pixel(r, c);
      int best = 0;
      int best_d = squared_distance(px, palette[0].color);
      for (std::size_t i = 1; i < palette.size(); ++i) {
        const int d = squared_distance(px, palette[i].color);
        if (d < best_d) {
          best_d = d;
          best = int(i);
        }
      }
      sample.set_cls(r, c, palette[std::size_t(best)].cls);
    }
  }
  return sample;
}

Image encode_map(const MapSample& sample, const ClassLegend& legend) {
  Image image(sample.width, sample.height, legend.background);
  for (int r = 0; r < sample.height; ++r)
    for (int c = 0; c < sample.width; ++c) {
      const int cls = sample.cls(r, c);
      if (cls != kBackground) image.set(r, c, legend.colors.at(std::size_t(cls)));
    }
  return image;
}

Image encode_prediction(const CellGrid& grid, const BoolGrid& legality, const ClassLegend& legend,
                        double alive_threshold) {
  require(legality.matches(grid), "encode_prediction: legality shape mismatch");
  const int k = grid.layout().k;
  require(k == legend.k(), "encode_prediction: legend class count differs from the layout");
  Image image(grid.width(), grid.height(), legend.background);
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      if (!legality(r, c)) continue;
      if (!(grid.alpha(r, c) > alive_threshold)) {
        image.set(r, c, legend.dead);
        continue;
      }
      auto cell = grid.cell(r, c);
      const auto best = std::max_element(cell.begin(), cell.begin() + k) - cell.begin();
      image.set(r, c, legend.colors[std::size_t(best)]);
    }
  }
  return image;
}

// ---------------------------------------------------------------------------
// Pre-explored discs

BoolGrid Disc::mask(int height, int width) const {
  BoolGrid out(height, width);
  const double radius2 = 0.25 * double(diameter) * double(diameter);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double dr = r - center_r;
      const double dc = c - center_c;
      out.set(r, c, dr * dr + dc * dc <= radius2);
    }
  return out;
}

json Disc::to_json() const { return {{"center_r", center_r}, {"center_c", center_c}, {"diameter", diameter}}; }

Disc Disc::from_json(const json& j) {
  return {j.at("center_r").get<double>(), j.at("center_c").get<double>(), j.at("diameter").get<int>()};
}

Disc sample_disc_placement(Rng& rng, int height, int width, double diameter_ratio) {
  require(diameter_ratio > 0 && diameter_ratio <= 1, "sample_disc: ratio must be in (0, 1]");
  require(height >= 1 && width >= 1, "sample_disc: empty map");
  const int diameter = std::max(1, int(std::lround(diameter_ratio * std::min(height, width))));
  const int top = int(uniform_index(rng, std::uint64_t(height - diameter + 1)));
  const int left = int(uniform_index(rng, std::uint64_t(width - diameter + 1)));
  return {top + 0.5 * (diameter - 1), left + 0.5 * (diameter - 1), diameter};
}

BoolGrid sample_disc(Rng& rng, int height, int width, double diameter_ratio) {
  return sample_disc_placement(rng, height, width, diameter_ratio).mask(height, width);
}

// ---------------------------------------------------------------------------
// Synthetic generator

double SynthKnobs::diurnal(double hour) const {
  auto bump = [](double t, double center, double width) {
    return std::exp(-(t - center) * (t - center) / (2 * width * width));
  };
  return base_level + morning_peak_height * bump(hour, morning_peak_hour, morning_peak_width) +
         evening_peak_height * bump(hour, evening_peak_hour, evening_peak_width) +
         midday_bump_height * bump(hour, 13.5, 2.0);
}

json SynthKnobs::to_json() const {
  return {{"hour_min", hour_min},
          {"hour_max", hour_max},
          {"base_level", base_level},
          {"morning_peak_hour", morning_peak_hour},
          {"morning_peak_height", morning_peak_height},
          {"morning_peak_width", morning_peak_width},
          {"evening_peak_hour", evening_peak_hour},
          {"evening_peak_height", evening_peak_height},
          {"evening_peak_width", evening_peak_width},
          {"midday_bump_height", midday_bump_height},
          {"segment_bias_sd", segment_bias_sd},
          {"field_sd", field_sd},
          {"field_cells", field_cells},
          {"segment_jitter_sd", segment_jitter_sd},
          {"wide_road_probability", wide_road_probability}};
}

SynthKnobs SynthKnobs::from_json(const json& j) {
  SynthKnobs k;
  reject_unknown_keys(j,
                      {"hour_min", "hour_max", "base_level", "morning_peak_hour", "morning_peak_height",
                       "morning_peak_width", "evening_peak_hour", "evening_peak_height", "evening_peak_width",
                       "midday_bump_height", "segment_bias_sd", "field_sd", "field_cells", "segment_jitter_sd",
                       "wide_road_probability"},
                      "generator knobs");
  k.hour_min = j.value("hour_min", k.hour_min);
  k.hour_max = j.value("hour_max", k.hour_max);
  k.base_level = j.value("base_level", k.base_level);
  k.morning_peak_hour = j.value("morning_peak_hour", k.morning_peak_hour);
  k.morning_peak_height = j.value("morning_peak_height", k.morning_peak_height);
  k.morning_peak_width = j.value("morning_peak_width", k.morning_peak_width);
  k.evening_peak_hour = j.value("evening_peak_hour", k.evening_peak_hour);
  k.evening_peak_height = j.value("evening_peak_height", k.evening_peak_height);
  k.evening_peak_width = j.value("evening_peak_width", k.evening_peak_width);
  k.midday_bump_height = j.value("midday_bump_height", k.midday_bump_height);
  k.segment_bias_sd = j.value("segment_bias_sd", k.segment_bias_sd);
  k.field_sd = j.value("field_sd", k.field_sd);
  k.field_cells = j.value("field_cells", k.field_cells);
  k.segment_jitter_sd = j.value("segment_jitter_sd", k.segment_jitter_sd);
  k.wide_road_probability = j.value("wide_road_probability", k.wide_road_probability);
  return k;
}

namespace {

struct RoadNetwork {
  int height = 0;
  int width = 0;
  std::vector<int> segment;  // per cell, -1 off-road
  std::vector<double> mid_r;
  std::vector<double> mid_c;
  std::vector<double> bias;

  int& at(int r, int c) { return segment[std::size_t(r) * std::size_t(width) + std::size_t(c)]; }
  int segments() const { return int(bias.size()); }
};

struct Arterial {
  int pos = 0;
  int thickness = 1;
};

std::vector<Arterial> place_arterials(Rng& rng, int extent, const SynthKnobs& knobs) {
  const int count = 2 + int(uniform_index(rng, 2)) + (extent >= 48 ? 1 : 0);
  const int band = extent / count;
  std::vector<Arterial> out;
  for (int i = 0; i < count; ++i) {
    Arterial a;
    a.pos = i * band + 1 + int(uniform_index(rng, std::uint64_t(std::max(1, band - 3))));
    a.thickness = bernoulli(rng, knobs.wide_road_probability) ? 2 : 1;
    a.pos = std::min(a.pos, extent - a.thickness);
    out.push_back(a);
  }
  return out;
}

RoadNetwork make_network(Rng& rng, int h, int w, const SynthKnobs& knobs) {
  RoadNetwork net;
  net.height = h;
  net.width = w;
  net.segment.assign(std::size_t(h) * std::size_t(w), -1);
  const auto rows = place_arterials(rng, h, knobs);
  const auto cols = place_arterials(rng, w, knobs);

  int next_id = 0;
  // Horizontal arterials, split into segments at each vertical arterial.
  for (const auto& a : rows) {
    const int first = next_id;
    for (int c = 0; c < w; ++c) {
      int interval = 0;
      for (const auto& v : cols) interval += v.pos <= c ? 1 : 0;
      for (int t = 0; t < a.thickness; ++t) net.at(a.pos + t, c) = first + interval;
    }
    next_id = first + int(cols.size()) + 1;
  }
  for (const auto& a : cols) {
    const int first = next_id;
    for (int r = 0; r < h; ++r) {
      int interval = 0;
      for (const auto& v : rows) interval += v.pos <= r ? 1 : 0;
      for (int t = 0; t < a.thickness; ++t)
        if (net.at(r, a.pos + t) < 0) net.at(r, a.pos + t) = first + interval;
    }
    next_id = first + int(rows.size()) + 1;
  }

  // Connectors between consecutive parallel arterials.
  const int connectors = 2 + int(uniform_index(rng, std::uint64_t(1 + h * w / 800)));
  for (int i = 0; i < connectors; ++i) {
    const bool vertical = bernoulli(rng, 0.5);
    const auto& across = vertical ? rows : cols;
    const int pair = int(uniform_index(rng, std::uint64_t(across.size() - 1)));
    const int from = across[std::size_t(pair)].pos + across[std::size_t(pair)].thickness;
    const int to = across[std::size_t(pair) + 1].pos;
    const int line = int(uniform_index(rng, std::uint64_t(vertical ? w : h)));
    for (int p = from; p < to; ++p) {
      int& cell = vertical ? net.at(p, line) : net.at(line, p);
      if (cell < 0) cell = next_id;
    }
    ++next_id;
  }

  // Compact ids to the segments that actually own cells.
  std::vector<int> remap(std::size_t(next_id), -1);
  std::vector<double> sum_r, sum_c, count;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int& id = net.at(r, c);
      if (id < 0) continue;
      if (remap[std::size_t(id)] < 0) {
        remap[std::size_t(id)] = int(sum_r.size());
        sum_r.push_back(0);
        sum_c.push_back(0);
        count.push_back(0);
      }
      id = remap[std::size_t(id)];
      sum_r[std::size_t(id)] += r;
      sum_c[std::size_t(id)] += c;
      count[std::size_t(id)] += 1;
    }
  }
  for (std::size_t s = 0; s < sum_r.size(); ++s) {
    net.mid_r.push_back(sum_r[s] / count[s]);
    net.mid_c.push_back(sum_c[s] / count[s]);
    net.bias.push_back(knobs.segment_bias_sd * normal(rng));
  }
  return net;
}

// Bilinear interpolation of a coarse Gaussian grid: spatially correlated noise.
double smooth_noise(const std::vector<double>& nodes, int cells, double r, double c, int h, int w) {
  const double y = r / std::max(1, h - 1) * cells;
  const double x = c / std::max(1, w - 1) * cells;
  const int y0 = std::min(cells - 1, int(std::floor(y)));
  const int x0 = std::min(cells - 1, int(std::floor(x)));
  const double fy = y - y0;
  const double fx = x - x0;
  auto node = [&](int yy, int xx) { return nodes[std::size_t(yy * (cells + 1) + xx)]; };
  return (1 - fy) * ((1 - fx) * node(y0, x0) + fx * node(y0, x0 + 1)) +
         fy * ((1 - fx) * node(y0 + 1, x0) + fx * node(y0 + 1, x0 + 1));
}

std::string timestamp_for(int index, int minutes) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "d%03dT%02d%02d", index, minutes / 60, minutes % 60);
  return buffer;
}

std::string location_id(int index) {
  char buffer[16];
  std::snprintf(buffer, sizeof buffer, "loc%02d", index);
  return buffer;
}

}  // namespace

void assign_split(DatasetManifest& manifest) {
  for (std::size_t l = 0; l < manifest.locations.size(); ++l) {
    auto& samples = manifest.locations[l].samples;
    const int count = int(samples.size());
    const int train = std::min(manifest.train_per_location, int(std::floor(0.8 * count)));
    std::vector<int> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(manifest.split_seed, 0x5B11u, l));
    for (int i = count - 1; i > 0; --i)
      std::swap(order[std::size_t(i)], order[uniform_index(rng, std::uint64_t(i + 1))]);
    for (auto& s : samples) s.train = false;
    for (int i = 0; i < train; ++i) samples[std::size_t(order[std::size_t(i)])].train = true;
  }
}

Dataset synth_generate(std::uint64_t seed, int n_locations, int samples_per_location, int height, int width,
                       const SynthKnobs& knobs, int train_per_location) {
  require(height >= 8 && width >= 8, "synth_generate: maps must be at least 8x8");
  require(n_locations >= 1 && samples_per_location >= 1, "synth_generate: need at least one location and sample");
  require(knobs.field_cells >= 1, "synth_generate: field_cells must be positive");

  Dataset dataset;
  auto& manifest = dataset.manifest;
  manifest.height = height;
  manifest.width = width;
  manifest.split_seed = derive_seed(seed, 0x5917u);
  manifest.train_per_location = train_per_location;
  manifest.generator_seed = seed;
  manifest.knobs = knobs;

  for (int l = 0; l < n_locations; ++l) {
    Rng location_rng(derive_seed(seed, 0x10CAu, std::uint64_t(l)));
    const RoadNetwork net = make_network(location_rng, height, width, knobs);
    LocationEntry entry;
    entry.id = location_id(l);

    for (int s = 0; s < samples_per_location; ++s) {
      Rng rng(derive_seed(seed, std::uint64_t(l) + 1, std::uint64_t(s)));
      const int minutes = int(std::lround(uniform(rng, knobs.hour_min, knobs.hour_max) * 60.0));
      const double hour = minutes / 60.0;
      const int cells = knobs.field_cells;
      std::vector<double> nodes(std::size_t((cells + 1) * (cells + 1)));
      for (auto& v : nodes) v = knobs.field_sd * normal(rng);
      const double base = knobs.diurnal(hour);

      std::vector<std::int8_t> seg_class(std::size_t(net.segments()));
      for (int g = 0; g < net.segments(); ++g) {
        const double level = base + net.bias[std::size_t(g)] +
                             smooth_noise(nodes, cells, net.mid_r[std::size_t(g)], net.mid_c[std::size_t(g)], height,
                                          width) +
                             knobs.segment_jitter_sd * normal(rng);
        seg_class[std::size_t(g)] = std::int8_t(std::clamp(int(std::floor(level)), 0, 3));
      }

      MapSample sample(height, width);
      sample.location = entry.id;
      sample.timestamp = timestamp_for(s, minutes);
      sample.hour = hour;
      sample.provenance = Provenance::synthetic;
      for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
          const int id = net.segment[std::size_t(r) * std::size_t(width) + std::size_t(c)];
          if (id >= 0) sample.set_cls(r, c, seg_class[std::size_t(id)]);
        }
      entry.samples.push_back({sample.timestamp, entry.id + "/" + sample.timestamp + ".ppm", hour, true});
      dataset.samples.push_back(std::move(sample));
    }
    manifest.locations.push_back(std::move(entry));
  }
  assign_split(manifest);
  return dataset;
}

// ---------------------------------------------------------------------------
// Manifest

json DatasetManifest::to_json() const {
  json locs = json::array();
  for (const auto& l : locations) {
    json samples = json::array();
    for (const auto& s : l.samples)
      samples.push_back({{"timestamp", s.timestamp}, {"file", s.file}, {"hour", s.hour}, {"split", s.train ? "train" : "test"}});
    json loc = {{"id", l.id}, {"samples", samples}};
    loc["lon"] = l.lon ? json(*l.lon) : json(nullptr);
    loc["lat"] = l.lat ? json(*l.lat) : json(nullptr);
    locs.push_back(loc);
  }
  json j = {{"schema", "nca-dataset"},
            {"version", kVersion},
            {"height", height},
            {"width", width},
            {"legend", legend.to_json()},
            {"split_seed", split_seed},
            {"train_per_location", train_per_location},
            {"locations", locs}};
  if (generator_seed) {
    j["generator"] = {{"seed", *generator_seed}, {"knobs", knobs ? knobs->to_json() : json::object()}};
  } else {
    j["generator"] = nullptr;
  }
  return j;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  try {
    reject_unknown_keys(j,
                        {"schema", "version", "height", "width", "legend", "split_seed", "train_per_location",
                         "locations", "generator"},
                        "manifest");
    if (j.at("schema").get<std::string>() != "nca-dataset") throw DataError("manifest: wrong schema name");
    if (j.at("version").get<int>() != kVersion)
      throw DataError("manifest: unsupported version " + std::to_string(j.at("version").get<int>()));
    DatasetManifest m;
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.legend = ClassLegend::from_json(j.at("legend"));
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.train_per_location = j.at("train_per_location").get<int>();
    if (j.contains("generator") && !j.at("generator").is_null()) {
      const auto& g = j.at("generator");
      reject_unknown_keys(g, {"seed", "knobs"}, "manifest generator");
      m.generator_seed = g.at("seed").get<std::uint64_t>();
      m.knobs = SynthKnobs::from_json(g.at("knobs"));
    }
    for (const auto& l : j.at("locations")) {
      reject_unknown_keys(l, {"id", "lon", "lat", "samples"}, "manifest location");
      LocationEntry loc;
      loc.id = l.at("id").get<std::string>();
      if (l.contains("lon") && !l.at("lon").is_null()) loc.lon = l.at("lon").get<double>();
      if (l.contains("lat") && !l.at("lat").is_null()) loc.lat = l.at("lat").get<double>();
      for (const auto& s : l.at("samples")) {
        reject_unknown_keys(s, {"timestamp", "file", "hour", "split"}, "manifest sample");
        const auto split = s.at("split").get<std::string>();
        if (split != "train" && split != "test") throw DataError("manifest: split must be train or test");
        loc.samples.push_back({s.at("timestamp").get<std::string>(), s.at("file").get<std::string>(),
                               s.value("hour", 0.0), split == "train"});
      }
      m.locations.push_back(std::move(loc));
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << to_json().dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
}

std::vector<const MapSample*> Dataset::split(bool train) const {
  std::vector<const MapSample*> out;
  std::size_t index = 0;
  for (const auto& loc : manifest.locations)
    for (const auto& s : loc.samples) {
      if (s.train == train) out.push_back(&samples.at(index));
      ++index;
    }
  return out;
}

std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::size_t index = 0;
  for (const auto& loc : dataset.manifest.locations) {
    fs::create_directories(root / loc.id);
    for (const auto& s : loc.samples) write_ppm(root / s.file, encode_map(dataset.samples.at(index++), dataset.manifest.legend));
  }
  const auto manifest_path = root / "manifest.json";
  dataset.manifest.save(manifest_path);
  return manifest_path;
}

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset dataset;
  dataset.manifest = DatasetManifest::load(root / "manifest.json");
  const auto& m = dataset.manifest;
  for (const auto& loc : m.locations) {
    for (const auto& s : loc.samples) {
      MapSample sample = decode_map(read_ppm(root / s.file), m.legend, m.height, m.width);
      sample.location = loc.id;
      sample.timestamp = s.timestamp;
      sample.hour = s.hour;
      sample.provenance = m.generator_seed ? Provenance::synthetic : Provenance::decoded;
      dataset.samples.push_back(std::move(sample));
    }
  }
  return dataset;
}

}  // namespace nca

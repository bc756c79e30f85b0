#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "nca/grid.hpp"
#include "nca/rng.hpp"

namespace nca {

/// Raised for malformed images, manifests or datasets (exit code 3 territory).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::int8_t kBackground = -1;

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Traffic-condition palette. `sources` lists extra source colors folded into
/// a class (the purple "extremely congested" color maps onto class 3).
struct ClassLegend {
  struct Source {
    Rgb color;
    int cls = 0;
  };

  std::vector<std::string> names;
  std::vector<Rgb> colors;
  std::vector<Source> sources;
  Rgb background{255, 255, 255};
  Rgb dead{150, 150, 150};

  static ClassLegend standard();
  int k() const { return int(colors.size()); }
  void validate() const;

  nlohmann::json to_json() const;
  static ClassLegend from_json(const nlohmann::json& j);
};

/// 8-bit RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, Rgb fill = {});
  Rgb pixel(int r, int c) const;
  void set(int r, int c, Rgb color);
  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255).
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image decode_ppm(const std::vector<std::uint8_t>& bytes);
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

enum class Provenance { decoded, synthetic };

struct MapSample {
  std::string location;
  std::string timestamp;
  double hour = 0;
  int height = 0;
  int width = 0;
  std::vector<std::int8_t> classes;  ///< kBackground off-road
  BoolGrid legality;
  Provenance provenance = Provenance::decoded;

  MapSample() = default;
  MapSample(int h, int w) : height(h), width(w), classes(std::size_t(h) * std::size_t(w), kBackground), legality(h, w) {}

  std::int8_t cls(int r, int c) const { return classes[std::size_t(r) * std::size_t(width) + std::size_t(c)]; }
  void set_cls(int r, int c, std::int8_t v) {
    classes[std::size_t(r) * std::size_t(width) + std::size_t(c)] = v;
    legality.set(r, c, v != kBackground);
  }
  std::size_t road_cells() const { return legality.count(); }
};

/// Nearest palette color (RGB Euclidean) per pixel.
MapSample decode_map(const Image& image, const ClassLegend& legend, int expected_height, int expected_width);

Image encode_map(const MapSample& sample, const ClassLegend& legend);

/// Renders a predicted grid: alive legal cells take their argmax class
/// color, dead legal cells the legend's dead gray, illegal cells background.
Image encode_prediction(const CellGrid& grid, const BoolGrid& legality, const ClassLegend& legend,
                        double alive_threshold);

/// Circular pre-explored area. Cell centers lie at integer coordinates; a
/// disc of diameter D spans D cells.
struct Disc {
  double center_r = 0;
  double center_c = 0;
  int diameter = 0;

  BoolGrid mask(int height, int width) const;
  nlohmann::json to_json() const;
  static Disc from_json(const nlohmann::json& j);
  bool operator==(const Disc&) const = default;
};

/// Diameter round(ratio * min(h, w)); placement uniform over positions that
/// keep the disc inside the map.
Disc sample_disc_placement(Rng& rng, int height, int width, double diameter_ratio);
BoolGrid sample_disc(Rng& rng, int height, int width, double diameter_ratio);

/// Statistical knobs of the synthetic generator (recorded in the manifest).
struct SynthKnobs {
  double hour_min = 6.0;
  double hour_max = 23.0;
  double base_level = 0.55;
  double morning_peak_hour = 9.0;
  double morning_peak_height = 2.9;
  double morning_peak_width = 1.3;
  double evening_peak_hour = 18.0;
  double evening_peak_height = 2.6;
  double evening_peak_width = 1.6;
  double midday_bump_height = 0.6;
  double segment_bias_sd = 0.2;
  double field_sd = 0.35;
  int field_cells = 4;  ///< coarse noise grid resolution per side
  double segment_jitter_sd = 0.1;
  double wide_road_probability = 0.35;

  double diurnal(double hour) const;
  nlohmann::json to_json() const;
  static SynthKnobs from_json(const nlohmann::json& j);
};

struct SampleEntry {
  std::string timestamp;
  std::string file;  ///< relative to the dataset root
  double hour = 0;
  bool train = true;
};

struct LocationEntry {
  std::string id;
  std::optional<double> lon;
  std::optional<double> lat;
  std::vector<SampleEntry> samples;
};

/// Versioned dataset description (manifest.json at the dataset root).
struct DatasetManifest {
  static constexpr int kVersion = 1;

  int height = 80;
  int width = 80;
  ClassLegend legend = ClassLegend::standard();
  std::uint64_t split_seed = 0;
  int train_per_location = 64;
  std::optional<std::uint64_t> generator_seed;
  std::optional<SynthKnobs> knobs;
  std::vector<LocationEntry> locations;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Chooses which samples of each location train: min(train_per_location,
/// floor(0.8 * count)) of them, picked by a seeded shuffle.
void assign_split(DatasetManifest& manifest);

struct Dataset {
  DatasetManifest manifest;
  std::vector<MapSample> samples;  ///< manifest order (location-major)

  std::vector<const MapSample*> split(bool train) const;
};

/// Procedural multi-location dataset; bitwise deterministic in `seed`.
Dataset synth_generate(std::uint64_t seed, int n_locations, int samples_per_location, int height, int width,
                       const SynthKnobs& knobs = {}, int train_per_location = 64);

/// Writes images and manifest.json under `root`; returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& root);

/// Loads manifest.json and decodes every listed image.
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace nca

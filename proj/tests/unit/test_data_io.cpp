#include <cmath>
#include <map>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "nca/data_io.hpp"

using namespace nca;

namespace {

int count_class(const MapSample& s, int cls) {
  int n = 0;
  for (auto v : s.classes) n += v == cls;
  return n;
}

SynthKnobs fixed_hour(double hour) {
  SynthKnobs k;
  k.hour_min = hour;
  k.hour_max = hour;
  return k;
}

}  // namespace

TEST_CASE("standard legend") {
  const auto legend = ClassLegend::standard();
  CHECK(legend.k() == 4);
  CHECK_NOTHROW(legend.validate());
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) CHECK_FALSE(legend.colors[std::size_t(i)] == legend.colors[std::size_t(j)]);
  CHECK(ClassLegend::from_json(legend.to_json()).colors == legend.colors);

  auto dup = legend;
  dup.colors[1] = dup.colors[0];
  CHECK_THROWS_AS(dup.validate(), DataError);
}

TEST_CASE("ppm codec") {
  Image img(3, 2);
  img.set(0, 0, {1, 2, 3});
  img.set(1, 2, {250, 0, 9});
  CHECK(decode_ppm(encode_ppm(img)) == img);

  const std::string header = "P6\n# comment\n3 2\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.resize(bytes.size() + 18, 7);
  const Image parsed = decode_ppm(bytes);
  CHECK(parsed.width == 3);
  CHECK(parsed.pixel(1, 1) == Rgb{7, 7, 7});

  bytes.pop_back();
  CHECK_THROWS_AS(decode_ppm(bytes), DataError);
  const std::string p3 = "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS(decode_ppm(std::vector<std::uint8_t>(p3.begin(), p3.end())), DataError);
}

TEST_CASE("decode_map examples") {
  const auto legend = ClassLegend::standard();

  SUBCASE("pure legend colors map to themselves") {
    Image img(5, 4, legend.background);
    for (int r = 0; r < 4; ++r) img.set(r, r, legend.colors[std::size_t(r)]);
    const MapSample s = decode_map(img, legend, 4, 5);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) {
        CHECK(s.cls(r, c) == (r == c ? r : kBackground));
        CHECK(s.legality(r, c) == (r == c));
      }
  }
  SUBCASE("all background") {
    const MapSample s = decode_map(Image(6, 6, legend.background), legend, 6, 6);
    CHECK(s.road_cells() == 0);
    CHECK(s.legality.count() == 0);
  }
  SUBCASE("purple folds into the severe class") {
    Image img(2, 1, legend.background);
    img.set(0, 0, {128, 0, 128});
    img.set(0, 1, {132, 4, 120});
    const MapSample s = decode_map(img, legend, 1, 2);
    CHECK(s.cls(0, 0) == 3);
    CHECK(s.cls(0, 1) == 3);
  }
  SUBCASE("nearest color on antialiased pixels") {
    Image img(1, 1);
    const Rgb g = legend.colors[0];
    img.set(0, 0, {std::uint8_t(g.r + 6), std::uint8_t(g.g - 5), std::uint8_t(g.b + 4)});
    CHECK(decode_map(img, legend, 1, 1).cls(0, 0) == 0);
  }
  SUBCASE("size mismatch") { CHECK_THROWS_AS(decode_map(Image(5, 5), legend, 5, 6), DataError); }
}

TEST_CASE("encode/decode round trip on synthetic samples") {
  const auto ds = synth_generate(3, 2, 4, 24, 20);
  const auto& legend = ds.manifest.legend;
  for (const auto& s : ds.samples) {
    const MapSample back = decode_map(encode_map(s, legend), legend, s.height, s.width);
    CHECK(back.classes == s.classes);
    CHECK(back.legality == s.legality);
  }
}

TEST_CASE("encode_prediction") {
  const auto legend = ClassLegend::standard();
  const ChannelLayout layout;
  BoolGrid legal(6, 6);
  for (int c = 0; c < 6; ++c) {
    legal.set(2, c, true);
    legal.set(4, c, true);
  }

  SUBCASE("all dead renders gray roads on background") {
    const Image img = encode_prediction(CellGrid(6, 6, layout), legal, legend, 0.1);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) CHECK(img.pixel(r, c) == (legal(r, c) ? legend.dead : legend.background));
  }
  SUBCASE("color histogram equals class histogram") {
    Rng rng(9);
    CellGrid g(6, 6, layout);
    std::map<int, int> want;  // -1 = dead legal, -2 = illegal
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) {
        const bool alive = bernoulli(rng, 0.7);
        const int cls = int(uniform_index(rng, 4));
        g.at(r, c, layout.alpha_index()) = alive ? 0.9f : 0.05f;
        g.at(r, c, cls) = 2.0f;
        ++want[!legal(r, c) ? -2 : alive ? cls : -1];
      }
    const Image img = encode_prediction(g, legal, legend, 0.1);
    std::map<int, int> got;
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 6; ++c) {
        const Rgb p = img.pixel(r, c);
        int key = p == legend.background ? -2 : p == legend.dead ? -1 : -3;
        for (int j = 0; j < 4; ++j)
          if (p == legend.colors[std::size_t(j)]) key = j;
        ++got[key];
      }
    CHECK(got == want);
  }
}

TEST_CASE("sample_disc") {
  SUBCASE("ratio 1 centers the disc") {
    Rng rng(1);
    for (int i = 0; i < 5; ++i) {
      const Disc d = sample_disc_placement(rng, 80, 80, 1.0);
      CHECK(d.diameter == 80);
      CHECK(d.center_r == 39.5);
      CHECK(d.center_c == 39.5);
    }
  }
  SUBCASE("area and containment at ratio 0.5 on 80x80") {
    Rng rng(2);
    const double area = std::numbers::pi * 20 * 20;
    for (int i = 0; i < 20; ++i) {
      const Disc d = sample_disc_placement(rng, 80, 80, 0.5);
      CHECK(d.diameter == 40);
      const BoolGrid m = d.mask(80, 80);
      const double cells = double(m.count());
      CHECK(cells >= area - 80);
      CHECK(cells <= area + 80);
      // The mask on a larger canvas loses nothing: the disc lies inside the map.
      CHECK(d.mask(200, 200).count() == m.count());
    }
  }
  SUBCASE("non-square map uses the short side") {
    Rng rng(3);
    CHECK(sample_disc_placement(rng, 30, 50, 0.5).diameter == 15);
  }
  SUBCASE("bad ratio") {
    Rng rng(4);
    CHECK_THROWS_AS(sample_disc(rng, 10, 10, 0.0), ContractViolation);
    CHECK_THROWS_AS(sample_disc(rng, 10, 10, 1.5), ContractViolation);
  }
}

TEST_CASE("synth_generate properties") {
  SUBCASE("deterministic in the seed") {
    const auto a = synth_generate(42, 2, 5, 16, 16);
    const auto b = synth_generate(42, 2, 5, 16, 16);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      CHECK(a.samples[i].classes == b.samples[i].classes);
      CHECK(a.samples[i].timestamp == b.samples[i].timestamp);
    }
    CHECK(a.manifest.to_json() == b.manifest.to_json());
    const auto c = synth_generate(43, 2, 5, 16, 16);
    bool differs = false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) differs |= a.samples[i].classes != c.samples[i].classes;
    CHECK(differs);
  }
  SUBCASE("fixed geometry per location") {
    const auto ds = synth_generate(5, 3, 6, 32, 32);
    for (const auto& s : ds.samples) {
      const auto& first = *std::find_if(ds.samples.begin(), ds.samples.end(),
                                        [&](const MapSample& o) { return o.location == s.location; });
      CHECK(s.legality == first.legality);
      CHECK(s.road_cells() > 0);
      for (int r = 0; r < s.height; ++r)
        for (int c = 0; c < s.width; ++c) CHECK(s.legality(r, c) == (s.cls(r, c) != kBackground));
    }
    CHECK_FALSE(ds.samples.front().legality == ds.samples.back().legality);
  }
  SUBCASE("hours within the configured window") {
    const auto ds = synth_generate(6, 1, 30, 16, 16);
    for (const auto& s : ds.samples) {
      CHECK(s.hour >= 6.0);
      CHECK(s.hour <= 23.0);
    }
  }
  SUBCASE("off-peak maps carry more unobstructed cells than the morning peak") {
    const SynthKnobs knobs;
    CHECK(knobs.diurnal(13) < knobs.diurnal(9));
    const auto peak = synth_generate(7, 1, 24, 40, 40, fixed_hour(9));
    const auto off = synth_generate(7, 1, 24, 40, 40, fixed_hour(13));
    REQUIRE(peak.samples.front().legality == off.samples.front().legality);
    double peak_green = 0;
    double off_green = 0;
    for (const auto& s : peak.samples) peak_green += count_class(s, 0);
    for (const auto& s : off.samples) off_green += count_class(s, 0);
    CHECK(off_green / 24 > peak_green / 24);
  }
  SUBCASE("too small") { CHECK_THROWS_AS(synth_generate(1, 1, 1, 7, 8), ContractViolation); }
}

TEST_CASE("train/test split") {
  auto ds = synth_generate(8, 2, 80, 12, 12);
  for (const auto& loc : ds.manifest.locations) {
    int train = 0;
    for (const auto& s : loc.samples) train += s.train;
    CHECK(train == 64);
  }
  CHECK(ds.split(true).size() == 128);
  CHECK(ds.split(false).size() == 32);

  auto small = synth_generate(8, 1, 10, 12, 12);
  CHECK(small.split(true).size() == 8);

  // Reproducible from the recorded seed.
  auto manifest = ds.manifest;
  for (auto& loc : manifest.locations)
    for (auto& s : loc.samples) s.train = !s.train;
  assign_split(manifest);
  CHECK(manifest.to_json() == ds.manifest.to_json());
}

TEST_CASE("dataset on disk round trip") {
  testing::TempDir dir("dataset");
  const auto ds = synth_generate(11, 2, 5, 16, 12);
  const auto manifest_path = write_dataset(ds, dir.path());
  CHECK(manifest_path == dir.path() / "manifest.json");
  CHECK(std::filesystem::exists(dir.path() / "loc00" / (ds.samples[0].timestamp + ".ppm")));
  const auto back = load_dataset(dir.path());
  CHECK(back.manifest.to_json() == ds.manifest.to_json());
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].classes == ds.samples[i].classes);
    CHECK(back.samples[i].location == ds.samples[i].location);
    CHECK(back.samples[i].provenance == Provenance::synthetic);
  }
  const auto train = back.split(true);
  const auto test = back.split(false);
  for (const auto* a : train)
    for (const auto* b : test) CHECK(a != b);
}

TEST_CASE("manifest validation") {
  const auto ds = synth_generate(12, 1, 3, 10, 10);
  auto j = ds.manifest.to_json();
  CHECK_NOTHROW(DatasetManifest::from_json(j));
  auto bad = j;
  bad["version"] = 2;
  CHECK_THROWS_AS(DatasetManifest::from_json(bad), DataError);
  bad = j;
  bad["extra"] = 1;
  CHECK_THROWS_AS(DatasetManifest::from_json(bad), DataError);
  bad = j;
  bad["locations"][0]["samples"][0]["split"] = "dev";
  CHECK_THROWS_AS(DatasetManifest::from_json(bad), DataError);
  bad = j;
  bad.erase("height");
  CHECK_THROWS_AS(DatasetManifest::from_json(bad), DataError);
  CHECK_THROWS_AS(DatasetManifest::load("/nonexistent/manifest.json"), DataError);
}

#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "nca/ca_step.hpp"
#include "nca/rng.hpp"

namespace testing {

template <typename Real>
nca::BasicField<Real> random_field(nca::Rng& rng, int h, int w, int d, double lo = -1, double hi = 1) {
  nca::BasicField<Real> f(h, w, d);
  for (auto& v : f.values()) v = static_cast<Real>(nca::uniform(rng, lo, hi));
  return f;
}

template <typename Real>
nca::BasicCellGrid<Real> random_grid(nca::Rng& rng, int h, int w, nca::ChannelLayout layout, double lo = -1,
                                     double hi = 1) {
  nca::BasicCellGrid<Real> g(h, w, layout);
  for (auto& v : g.values()) v = static_cast<Real>(nca::uniform(rng, lo, hi));
  return g;
}

template <typename Real>
nca::BasicModelParams<Real> random_params(nca::Rng& rng, int in, int hidden, int out, double scale) {
  auto p = nca::BasicModelParams<Real>::zeros(in, hidden, out);
  for (auto* t : {&p.w1, &p.b1, &p.w2})
    for (auto& v : *t) v = static_cast<Real>(nca::uniform(rng, -scale, scale));
  return p;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("nca_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing

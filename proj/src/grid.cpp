#include "nca/grid.hpp"

#include <algorithm>
#include <cmath>

namespace nca {

void Kernel::validate() const {
  require(size == 3 || size == 5 || size == 7, "Kernel: size must be 3, 5 or 7");
  require(weights.size() == std::size_t(size * size), "Kernel: weight count does not match size");
  for (double w : weights) require(std::isfinite(w), "Kernel: non-finite weight");
}

template <typename Real>
BasicField<Real> depthwise_convolve(const BasicField<Real>& grid, const Kernel& kernel) {
  kernel.validate();
  const int h = grid.height();
  const int w = grid.width();
  const int depth = grid.depth();
  const int half = kernel.size / 2;
  BasicField<Real> out(h, w, depth);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      auto dst = out.cell(r, c);
      for (int dr = 0; dr < kernel.size; ++dr) {
        const int rr = r + dr - half;
        if (rr < 0 || rr >= h) continue;
        for (int dc = 0; dc < kernel.size; ++dc) {
          const int cc = c + dc - half;
          if (cc < 0 || cc >= w) continue;
          const Real weight = static_cast<Real>(kernel(dr, dc));
          if (weight == Real(0)) continue;
          auto src = grid.cell(rr, cc);
          for (int ch = 0; ch < depth; ++ch) dst[ch] += weight * src[ch];
        }
      }
    }
  }
  return out;
}

template <typename Real>
BasicCellGrid<Real> depthwise_convolve(const BasicCellGrid<Real>& grid, const Kernel& kernel) {
  BasicCellGrid<Real> out(grid.height(), grid.width(), grid.layout());
  auto plain = depthwise_convolve(static_cast<const BasicField<Real>&>(grid), kernel);
  std::copy(plain.values().begin(), plain.values().end(), out.values().begin());
  return out;
}

template <typename Real>
BasicField<Real> neighborhood_max(const BasicField<Real>& grid, int channel, int window) {
  require(window >= 1 && window % 2 == 1, "neighborhood_max: window must be odd");
  require(channel >= 0 && channel < grid.depth(), "neighborhood_max: channel out of range");
  const int h = grid.height();
  const int w = grid.width();
  const int half = window / 2;
  BasicField<Real> out(h, w, 1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      Real best = grid.at(r, c, channel);
      for (int rr = r - half; rr <= r + half; ++rr) {
        for (int cc = c - half; cc <= c + half; ++cc) {
          const Real v = grid.in_bounds(rr, cc) ? grid.at(rr, cc, channel) : Real(0);
          best = std::max(best, v);
        }
      }
      out.at(r, c, 0) = best;
    }
  }
  return out;
}

template <typename Real>
void softmax(std::span<const Real> logits, std::span<Real> out) {
  Real top = logits[0];
  for (Real x : logits) top = std::max(top, x);
  Real total = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - top);
    total += out[j];
  }
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] /= total;
}

template <typename Real>
BasicField<Real> softmax_logits(const BasicCellGrid<Real>& grid) {
  const int k = grid.layout().k;
  BasicField<Real> out(grid.height(), grid.width(), k);
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) {
      softmax<Real>(grid.cell(r, c).first(std::size_t(k)), out.cell(r, c));
    }
  }
  return out;
}

#define NCA_INSTANTIATE_GRID(Real)                                                              \
  template BasicField<Real> depthwise_convolve(const BasicField<Real>&, const Kernel&);        \
  template BasicCellGrid<Real> depthwise_convolve(const BasicCellGrid<Real>&, const Kernel&);  \
  template BasicField<Real> neighborhood_max(const BasicField<Real>&, int, int);               \
  template void softmax<Real>(std::span<const Real>, std::span<Real>);                         \
  template BasicField<Real> softmax_logits(const BasicCellGrid<Real>&);

NCA_INSTANTIATE_GRID(float)
NCA_INSTANTIATE_GRID(double)

#undef NCA_INSTANTIATE_GRID

}  // namespace nca

#include "nca/perception.hpp"

#include <algorithm>
#include <cmath>

namespace nca {

namespace {

std::vector<double> binomial_row(int length) {
  std::vector<double> row{1.0};
  while (int(row.size()) < length) {
    std::vector<double> next(row.size() + 1, 0.0);
    for (std::size_t i = 0; i < row.size(); ++i) {
      next[i] += row[i];
      next[i + 1] += row[i];
    }
    row = std::move(next);
  }
  return row;
}

// [-1, 0, 1] convolved with [1, 1] until it reaches `length` taps.
std::vector<double> derivative_row(int length) {
  std::vector<double> row{-1.0, 0.0, 1.0};
  while (int(row.size()) < length) {
    std::vector<double> next(row.size() + 1, 0.0);
    for (std::size_t i = 0; i < row.size(); ++i) {
      next[i] += row[i];
      next[i + 1] += row[i];
    }
    row = std::move(next);
  }
  return row;
}

}  // namespace

Kernel make_sobel(int size, Axis axis) {
  require(size == 3 || size == 5 || size == 7, "make_sobel: size must be 3, 5 or 7");
  const auto smooth = binomial_row(size);
  const auto deriv = derivative_row(size);
  Kernel kernel{size, std::vector<double>(std::size_t(size * size))};
  double norm = 0.0;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double v = axis == Axis::x ? smooth[r] * deriv[c] : deriv[r] * smooth[c];
      kernel.weights[std::size_t(r * size + c)] = v;
      norm += std::abs(v);
    }
  }
  for (double& v : kernel.weights) v /= norm;
  return kernel;
}

FilterBank FilterBank::standard() {
  FilterBank bank;
  for (int size : {3, 5, 7}) {
    bank.kernels.push_back({"sobel_x_" + std::to_string(size), make_sobel(size, Axis::x)});
    bank.kernels.push_back({"sobel_y_" + std::to_string(size), make_sobel(size, Axis::y)});
  }
  return bank;
}

const FilterBank& standard_filter_bank() {
  static const FilterBank bank = FilterBank::standard();
  return bank;
}

template <typename Real>
void perceive_cell(const BasicCellGrid<Real>& grid, const FilterBank& bank, int r, int c,
                   std::span<Real> out) {
  const int n = grid.layout().n;
  require(int(out.size()) == bank.perception_dim(grid.layout()), "perceive_cell: output size mismatch");
  std::fill(out.begin(), out.end(), Real(0));
  Real* dst = out.data();

  if (bank.includes_identity) {
    auto self = grid.cell(r, c);
    std::copy(self.begin(), self.end(), dst);
    dst += n;
  }

  for (const auto& labeled : bank.kernels) {
    const Kernel& kernel = labeled.kernel;
    const int half = kernel.size / 2;
    for (int dr = 0; dr < kernel.size; ++dr) {
      const int rr = r + dr - half;
      if (rr < 0 || rr >= grid.height()) continue;
      for (int dc = 0; dc < kernel.size; ++dc) {
        const int cc = c + dc - half;
        if (cc < 0 || cc >= grid.width()) continue;
        const Real weight = static_cast<Real>(kernel(dr, dc));
        if (weight == Real(0)) continue;
        const Real* src = grid.cell(rr, cc).data();
        for (int ch = 0; ch < n; ++ch) dst[ch] += weight * src[ch];
      }
    }
    dst += n;
  }

  const int half = bank.max_window / 2;
  bool first = true;
  for (int rr = r - half; rr <= r + half; ++rr) {
    for (int cc = c - half; cc <= c + half; ++cc) {
      if (!grid.in_bounds(rr, cc)) {
        for (int ch = 0; ch < n; ++ch) dst[ch] = first ? Real(0) : std::max(dst[ch], Real(0));
      } else {
        const Real* src = grid.cell(rr, cc).data();
        for (int ch = 0; ch < n; ++ch) dst[ch] = first ? src[ch] : std::max(dst[ch], src[ch]);
      }
      first = false;
    }
  }
}

template <typename Real>
void perceive_cell_backward(const BasicCellGrid<Real>& grid, const FilterBank& bank, int r, int c,
                            std::span<const Real> grad_out, BasicField<Real>& grad_grid) {
  const int n = grid.layout().n;
  const Real* g = grad_out.data();

  if (bank.includes_identity) {
    auto dst = grad_grid.cell(r, c);
    for (int ch = 0; ch < n; ++ch) dst[ch] += g[ch];
    g += n;
  }

  for (const auto& labeled : bank.kernels) {
    const Kernel& kernel = labeled.kernel;
    const int half = kernel.size / 2;
    for (int dr = 0; dr < kernel.size; ++dr) {
      const int rr = r + dr - half;
      if (rr < 0 || rr >= grid.height()) continue;
      for (int dc = 0; dc < kernel.size; ++dc) {
        const int cc = c + dc - half;
        if (cc < 0 || cc >= grid.width()) continue;
        const Real weight = static_cast<Real>(kernel(dr, dc));
        if (weight == Real(0)) continue;
        Real* dst = grad_grid.cell(rr, cc).data();
        for (int ch = 0; ch < n; ++ch) dst[ch] += weight * g[ch];
      }
    }
    g += n;
  }

  const int half = bank.max_window / 2;
  for (int ch = 0; ch < n; ++ch) {
    if (g[ch] == Real(0)) continue;
    Real best = 0;
    int best_r = -1;
    int best_c = -1;
    bool first = true;
    for (int rr = r - half; rr <= r + half; ++rr) {
      for (int cc = c - half; cc <= c + half; ++cc) {
        const bool inside = grid.in_bounds(rr, cc);
        const Real v = inside ? grid.at(rr, cc, ch) : Real(0);
        if (first || v > best) {
          best = v;
          best_r = inside ? rr : -1;
          best_c = inside ? cc : -1;
        }
        first = false;
      }
    }
    if (best_r >= 0) grad_grid.at(best_r, best_c, ch) += g[ch];
  }
}

template <typename Real>
BasicField<Real> perceive(const BasicCellGrid<Real>& grid, const FilterBank& bank) {
  const int dim = bank.perception_dim(grid.layout());
  BasicField<Real> out(grid.height(), grid.width(), dim);
  for (int r = 0; r < grid.height(); ++r) {
    for (int c = 0; c < grid.width(); ++c) perceive_cell(grid, bank, r, c, out.cell(r, c));
  }
  return out;
}

#define NCA_INSTANTIATE_PERCEPTION(Real)                                                        \
  template void perceive_cell(const BasicCellGrid<Real>&, const FilterBank&, int, int,         \
                              std::span<Real>);                                                 \
  template void perceive_cell_backward(const BasicCellGrid<Real>&, const FilterBank&, int, int, \
                                       std::span<const Real>, BasicField<Real>&);               \
  template BasicField<Real> perceive(const BasicCellGrid<Real>&, const FilterBank&);

NCA_INSTANTIATE_PERCEPTION(float)
NCA_INSTANTIATE_PERCEPTION(double)

#undef NCA_INSTANTIATE_PERCEPTION

}  // namespace nca

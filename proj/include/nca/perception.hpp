#pragma once

#include <span>
#include <string>
#include <vector>

#include "nca/grid.hpp"

namespace nca {

enum class Axis { x, y };

/// Binomial-smoothed Sobel kernel of size 3, 5 or 7, normalized by the sum
/// of absolute entries. Axis x differentiates along columns; y is the
/// transpose.
Kernel make_sobel(int size, Axis axis);

struct LabeledKernel {
  std::string label;
  Kernel kernel;
};

/// Fixed perception filters. Per-cell output order is
/// [identity | sobel_x_3 | sobel_y_3 | sobel_x_5 | sobel_y_5 | sobel_x_7 | sobel_y_7 | max3],
/// each block n channels wide.
struct FilterBank {
  std::vector<LabeledKernel> kernels;
  int max_window = 3;
  bool includes_identity = true;

  static FilterBank standard();

  int blocks() const { return int(kernels.size()) + (includes_identity ? 1 : 0) + 1; }
  int perception_dim(const ChannelLayout& layout) const { return blocks() * layout.n; }
};

/// Shared immutable instance of FilterBank::standard().
const FilterBank& standard_filter_bank();

/// Perception vector of a single cell, written to `out` (perception_dim long).
template <typename Real>
void perceive_cell(const BasicCellGrid<Real>& grid, const FilterBank& bank, int r, int c,
                   std::span<Real> out);

/// Adds d(loss)/d(grid) given d(loss)/d(perception of cell (r,c)). The max
/// block routes to the first maximal tap in row-major window order; padding
/// taps absorb their share.
template <typename Real>
void perceive_cell_backward(const BasicCellGrid<Real>& grid, const FilterBank& bank, int r, int c,
                            std::span<const Real> grad_out, BasicField<Real>& grad_grid);

/// Perception field for every cell (H x W x perception_dim).
template <typename Real>
BasicField<Real> perceive(const BasicCellGrid<Real>& grid, const FilterBank& bank);

}  // namespace nca

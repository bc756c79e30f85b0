#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nca {

/// Raised when a caller breaks a documented precondition (shape mismatch,
/// bad channel index, unsupported kernel size, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

/// Channel bookkeeping for one cell: [0,k) class logits, k aliveness,
/// (k, n) hidden signals.
struct ChannelLayout {
  int k = 4;
  int n = 16;

  constexpr int alpha_index() const { return k; }
  constexpr int hidden_begin() const { return k + 1; }
  constexpr int hidden_count() const { return n - k - 1; }

  void validate() const {
    require(k >= 1, "ChannelLayout: k must be positive");
    require(n >= k + 2, "ChannelLayout: need at least one hidden channel (n >= k + 2)");
  }

  bool operator==(const ChannelLayout&) const = default;
};

/// Every channel of a living grid stays inside [-kStateClamp, kStateClamp].
inline constexpr double kStateClamp = 30.0;

/// Dense H x W x depth field, row-major and depth-minor in one flat buffer.
template <typename Real>
class BasicField {
 public:
  using value_type = Real;

  BasicField() = default;
  BasicField(int height, int width, int depth, Real fill = Real(0))
      : height_(height), width_(width), depth_(depth) {
    require(height >= 0 && width >= 0 && depth >= 0, "BasicField: negative dimension");
    values_.assign(std::size_t(height) * std::size_t(width) * std::size_t(depth), fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int depth() const { return depth_; }
  std::size_t cells() const { return std::size_t(height_) * std::size_t(width_); }
  bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < height_ && c < width_; }

  std::size_t offset(int r, int c) const {
    return (std::size_t(r) * std::size_t(width_) + std::size_t(c)) * std::size_t(depth_);
  }

  Real& at(int r, int c, int d) { return values_[offset(r, c) + std::size_t(d)]; }
  Real at(int r, int c, int d) const { return values_[offset(r, c) + std::size_t(d)]; }

  std::span<Real> cell(int r, int c) { return {values_.data() + offset(r, c), std::size_t(depth_)}; }
  std::span<const Real> cell(int r, int c) const {
    return {values_.data() + offset(r, c), std::size_t(depth_)};
  }

  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }
  Real* data() { return values_.data(); }
  const Real* data() const { return values_.data(); }

  bool same_shape(const BasicField& other) const {
    return height_ == other.height_ && width_ == other.width_ && depth_ == other.depth_;
  }

  bool operator==(const BasicField&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int depth_ = 0;
  std::vector<Real> values_;
};

/// The automaton state: a field whose depth is the channel layout's n.
template <typename Real>
class BasicCellGrid : public BasicField<Real> {
 public:
  BasicCellGrid() = default;
  BasicCellGrid(int height, int width, ChannelLayout layout)
      : BasicField<Real>(height, width, layout.n), layout_(layout) {
    layout.validate();
  }

  const ChannelLayout& layout() const { return layout_; }
  Real alpha(int r, int c) const { return this->at(r, c, layout_.alpha_index()); }

  template <typename Other>
  BasicCellGrid<Other> cast() const {
    BasicCellGrid<Other> out(this->height(), this->width(), layout_);
    auto src = this->values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<Other>(src[i]);
    return out;
  }

  bool operator==(const BasicCellGrid&) const = default;

 private:
  ChannelLayout layout_;
};

using Field = BasicField<float>;
using CellGrid = BasicCellGrid<float>;

/// One boolean per cell. Stored as bytes so it can be viewed as a span.
class BoolGrid {
 public:
  BoolGrid() = default;
  BoolGrid(int height, int width, bool fill = false)
      : height_(height), width_(width), bits_(std::size_t(height) * std::size_t(width), fill ? 1 : 0) {
    require(height >= 0 && width >= 0, "BoolGrid: negative dimension");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < height_ && c < width_; }
  bool operator()(int r, int c) const { return bits_[index(r, c)] != 0; }
  void set(int r, int c, bool value) { bits_[index(r, c)] = value ? 1 : 0; }

  std::size_t count() const {
    std::size_t total = 0;
    for (auto b : bits_) total += b;
    return total;
  }
  std::span<const std::uint8_t> bytes() const { return bits_; }

  template <typename Grid>
  bool matches(const Grid& grid) const {
    return height_ == grid.height() && width_ == grid.width();
  }

  bool operator==(const BoolGrid&) const = default;

 private:
  std::size_t index(int r, int c) const { return std::size_t(r) * std::size_t(width_) + std::size_t(c); }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Square odd-sized filter; weights[row * size + col].
struct Kernel {
  int size = 3;
  std::vector<double> weights;

  double operator()(int row, int col) const { return weights[std::size_t(row * size + col)]; }
  void validate() const;
};

/// Correlation with zero padding:
///   out[r,c,ch] = sum_{dr,dc} K[dr,dc] * in[r + dr - s/2, c + dc - s/2, ch].
/// Taps are accumulated in row-major kernel order for every output cell.
template <typename Real>
BasicField<Real> depthwise_convolve(const BasicField<Real>& grid, const Kernel& kernel);

template <typename Real>
BasicCellGrid<Real> depthwise_convolve(const BasicCellGrid<Real>& grid, const Kernel& kernel);

/// Window maximum of one channel (window includes the cell, borders read as 0).
template <typename Real>
BasicField<Real> neighborhood_max(const BasicField<Real>& grid, int channel, int window);

/// Max-subtracted softmax over the first k channels of every cell (H x W x k).
template <typename Real>
BasicField<Real> softmax_logits(const BasicCellGrid<Real>& grid);

/// Softmax of one logit vector into `out` (same length).
template <typename Real>
void softmax(std::span<const Real> logits, std::span<Real> out);

}  // namespace nca

#include "fastvol/grid.hpp"

#include <algorithm>
#include <cmath>

#include "fastvol/errors.hpp"

namespace fastvol {

TorusGrid::TorusGrid(std::vector<int> shape) : shape_(std::move(shape)) {
  if (shape_.empty()) fail(ErrorCode::DomainError, "torus grid needs at least one axis");
  strides_.assign(shape_.size(), 1);
  size_ = 1;
  for (int k = static_cast<int>(shape_.size()) - 1; k >= 0; --k) {
    if (shape_[k] < 4) fail(ErrorCode::DomainError, "torus grid needs >= 4 nodes per axis");
    strides_[k] = size_;
    size_ *= static_cast<std::size_t>(shape_[k]);
    cell_volume_ /= shape_[k];
  }
  // strides_ computed bottom-up give column-major; recompute row-major
  size_ = 1;
  for (int k = static_cast<int>(shape_.size()) - 1; k >= 0; --k) {
    strides_[k] = size_;
    size_ *= static_cast<std::size_t>(shape_[k]);
  }
}

TorusGrid TorusGrid::uniform(int dim, int nodes_per_axis) {
  return TorusGrid(std::vector<int>(static_cast<std::size_t>(dim), nodes_per_axis));
}

std::size_t TorusGrid::index(std::span<const int> idx) const {
  std::size_t flat = 0;
  for (std::size_t k = 0; k < shape_.size(); ++k) {
    int n = shape_[k];
    int i = idx[k] % n;
    if (i < 0) i += n;
    flat += strides_[k] * static_cast<std::size_t>(i);
  }
  return flat;
}

std::size_t TorusGrid::neighbor(std::size_t flat, int axis, int offset) const {
  int n = shape_[axis];
  std::size_t s = strides_[axis];
  int i = static_cast<int>((flat / s) % static_cast<std::size_t>(n));
  int j = (i + offset) % n;
  if (j < 0) j += n;
  return flat + (static_cast<std::size_t>(j) - static_cast<std::size_t>(i)) * s;
}

void TorusGrid::unflatten(std::size_t flat, std::span<int> idx) const {
  for (std::size_t k = 0; k < shape_.size(); ++k) {
    idx[k] = static_cast<int>((flat / strides_[k]) % static_cast<std::size_t>(shape_[k]));
  }
}

void TorusGrid::coords(std::size_t flat, std::span<double> y) const {
  for (std::size_t k = 0; k < shape_.size(); ++k) {
    auto i = (flat / strides_[k]) % static_cast<std::size_t>(shape_[k]);
    y[k] = static_cast<double>(i) / shape_[k];
  }
}

GridFunction::GridFunction(TorusGrid grid)
    : grid_(std::move(grid)), values_(grid_.size(), 0.0) {}

GridFunction::GridFunction(TorusGrid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  if (values_.size() != grid_.size())
    fail(ErrorCode::DimensionMismatch, "grid function value count != node count");
}

double GridFunction::interpolate(std::span<const double> y) const {
  const int m = grid_.dim();
  // base node and fractional offsets per axis
  int base[8];
  double frac[8];
  if (m > 8) fail(ErrorCode::DomainError, "interpolation supports dim <= 8");
  for (int k = 0; k < m; ++k) {
    int n = grid_.shape()[k];
    double u = y[k] - std::floor(y[k]);
    double s = u * n;
    int i = static_cast<int>(std::floor(s));
    if (i >= n) i = n - 1;
    base[k] = i;
    frac[k] = s - i;
  }
  // multilinear blend over the 2^m corners
  double acc = 0.0;
  const int corners = 1 << m;
  for (int c = 0; c < corners; ++c) {
    double w = 1.0;
    int idx[8];
    for (int k = 0; k < m; ++k) {
      if (c & (1 << k)) {
        idx[k] = base[k] + 1;
        w *= frac[k];
      } else {
        idx[k] = base[k];
        w *= 1.0 - frac[k];
      }
    }
    if (w != 0.0) acc += w * values_[grid_.index(std::span<const int>(idx, m))];
  }
  return acc;
}

double GridFunction::max_abs() const {
  double v = 0.0;
  for (double x : values_) v = std::max(v, std::abs(x));
  return v;
}

double GridFunction::min() const { return *std::min_element(values_.begin(), values_.end()); }
double GridFunction::max() const { return *std::max_element(values_.begin(), values_.end()); }

double GridFunction::integral() const {
  // pairwise summation keeps the reduction stable on big grids
  double acc = 0.0;
  for (double v : values_) acc += v;
  return acc * grid_.cell_volume();
}

void GridFunction::gradient_at(std::size_t flat, std::span<double> out) const {
  for (int k = 0; k < grid_.dim(); ++k) {
    double h = grid_.spacing(k);
    out[k] = (values_[grid_.neighbor(flat, k, +1)] - values_[grid_.neighbor(flat, k, -1)]) / (2 * h);
  }
}

}  // namespace fastvol

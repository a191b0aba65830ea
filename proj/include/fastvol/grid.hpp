#ifndef FASTVOL_GRID_HPP
#define FASTVOL_GRID_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fastvol {

// Uniform periodic grid on [0,1)^m, nodes at k_i/N_i, row-major enumeration.
class TorusGrid {
 public:
  TorusGrid() = default;
  TorusGrid(std::vector<int> shape);
  static TorusGrid uniform(int dim, int nodes_per_axis);

  int dim() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  double spacing(int axis) const { return 1.0 / shape_[axis]; }
  std::size_t size() const { return size_; }
  // volume element prod h_k
  double cell_volume() const { return cell_volume_; }

  // flat index from per-axis indices, wrapping modulo N_k
  std::size_t index(std::span<const int> idx) const;
  // flat index of node shifted by `offset` along `axis` (wraps)
  std::size_t neighbor(std::size_t flat, int axis, int offset) const;
  void coords(std::size_t flat, std::span<double> y) const;
  void unflatten(std::size_t flat, std::span<int> idx) const;

 private:
  std::vector<int> shape_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
  double cell_volume_ = 1.0;
};

// Scalar field sampled on a TorusGrid with periodic multilinear interpolation.
class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(TorusGrid grid);
  GridFunction(TorusGrid grid, std::vector<double> values);

  const TorusGrid& grid() const { return grid_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double interpolate(std::span<const double> y) const;
  double max_abs() const;
  double min() const;
  double max() const;
  // integral with the cell volume weight (mass)
  double integral() const;

  // centered-difference gradient at a node, periodic
  void gradient_at(std::size_t flat, std::span<double> out) const;

 private:
  TorusGrid grid_;
  std::vector<double> values_;
};

}  // namespace fastvol

#endif

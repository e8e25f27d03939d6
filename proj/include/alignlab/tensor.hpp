#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace alignlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Row-major dense array of doubles with an explicit shape. Used at the I/O
/// boundary (datasets, exported parameters); the numeric core works on
/// column-major Eigen matrices with one example per column.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> extents)
      : shape(std::move(extents)), data(element_count(shape), 0.0) {}

  static std::size_t element_count(const std::vector<std::size_t>& extents) {
    return std::accumulate(extents.begin(), extents.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  bool consistent() const { return element_count(shape) == data.size(); }

  /// 2-D view: shape {rows, cols} to a column-major matrix with the same
  /// element positions.
  static Tensor from_matrix(const Matrix& m);
  Matrix to_matrix() const;
};

bool all_finite(const Matrix& m);

}  // namespace alignlab

#include "alignlab/tensor.hpp"

#include <cmath>

#include "alignlab/error.hpp"

namespace alignlab {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_spec: return "invalid spec";
    case ErrorKind::shape_mismatch: return "shape mismatch";
    case ErrorKind::non_finite: return "non-finite value";
    case ErrorKind::empty_input: return "empty input";
    case ErrorKind::missing_example: return "missing example";
    case ErrorKind::undefined_score: return "undefined score";
    case ErrorKind::invalid_config: return "invalid config";
    case ErrorKind::bad_magic: return "bad magic";
    case ErrorKind::truncated: return "truncated payload";
    case ErrorKind::io: return "i/o error";
    case ErrorKind::step_mismatch: return "step mismatch";
    case ErrorKind::unsupported: return "unsupported";
  }
  return "error";
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      t.data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return t;
}

Matrix Tensor::to_matrix() const {
  if (shape.size() != 2 || !consistent())
    throw Error(ErrorKind::shape_mismatch, "tensor is not a consistent 2-D array");
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto cols = static_cast<Eigen::Index>(shape[1]);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace alignlab

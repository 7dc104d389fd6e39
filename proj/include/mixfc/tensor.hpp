#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>

namespace mixfc {

using Index = Eigen::Index;

/// Dense row-major matrix templated on scalar. Every tensor in the library is
/// at most rank two: scalars are 1x1, row vectors are 1xN.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Tensor = Matrix;

inline std::array<Index, 2> shape_of(const Tensor& t) { return {t.rows(), t.cols()}; }

inline std::string shape_string(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

inline Tensor scalar_tensor(double v) {
  Tensor t(1, 1);
  t(0, 0) = v;
  return t;
}

inline bool is_scalar(const Tensor& t) { return t.rows() == 1 && t.cols() == 1; }

}  // namespace mixfc

#pragma once

#include <Eigen/Dense>

namespace poi {

/// Row-major dense matrix; one row per POI throughout the project.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

}  // namespace poi

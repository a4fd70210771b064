#pragma once

#include <Eigen/Core>

namespace geodistill {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x d row-major single-precision matrix of per-point descriptors.
using FeatureMatrix = RowMatrix<float>;

}  // namespace geodistill

#pragma once

#include <span>
#include <vector>

#include "geodistill/mesh.hpp"
#include "geodistill/types.hpp"

// Hot loops with two implementations each: a plain serial reference and an
// OpenMP version. Both must produce bitwise identical results; the tests and
// the benchmark compare them directly.
namespace geodistill::kernels {

/// Dot product and cosine of two float rows, accumulated in double in index
/// order. Every cosine in the toolkit goes through this arithmetic so that
/// optimized and brute-force paths agree exactly.
double dot(std::span<const float> u, std::span<const float> v);
double cosine_from(double dot_uv, double norm_u, double norm_v);

struct ArgmaxResult {
  std::vector<int> index;
  std::vector<double> score;
};

/// For each row of `queries`, the row of `candidates` with the highest cosine
/// similarity; ties go to the lowest candidate index. Rows must be nonzero.
ArgmaxResult argmax_cosine_serial(const FeatureMatrix& queries, const FeatureMatrix& candidates);
ArgmaxResult argmax_cosine_parallel(const FeatureMatrix& queries, const FeatureMatrix& candidates);

double max_pairwise_distance_serial(std::span<const Vec3> points);
double max_pairwise_distance_parallel(std::span<const Vec3> points);

/// Row Euclidean norms in double.
std::vector<double> row_norms(const FeatureMatrix& m);

}  // namespace geodistill::kernels

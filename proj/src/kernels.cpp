#include "geodistill/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "geodistill/error.hpp"

namespace geodistill::kernels {

double dot(std::span<const float> u, std::span<const float> v) {
  double acc = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    acc += static_cast<double>(u[k]) * static_cast<double>(v[k]);
  }
  return acc;
}

double cosine_from(double dot_uv, double norm_u, double norm_v) {
  return std::clamp(dot_uv / (norm_u * norm_v), -1.0, 1.0);
}

std::vector<double> row_norms(const FeatureMatrix& m) {
  std::vector<double> norms(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const std::span<const float> row(m.row(i).data(), m.cols());
    norms[i] = std::sqrt(dot(row, row));
  }
  return norms;
}

namespace {

void check_argmax_inputs(const FeatureMatrix& queries, const FeatureMatrix& candidates) {
  if (queries.cols() != candidates.cols()) {
    fail(ErrorKind::Shape, "feature dimensions differ: " + std::to_string(queries.cols()) +
                               " vs " + std::to_string(candidates.cols()));
  }
  if (queries.rows() == 0 || candidates.rows() == 0) {
    fail(ErrorKind::Shape, "cannot match against an empty feature set");
  }
}

void check_nonzero(const std::vector<double>& norms, const char* what) {
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > 0.0)) {
      fail(ErrorKind::Numeric, std::string(what) + " row " + std::to_string(i) + " has zero norm");
    }
  }
}

// Scans all candidates for one query row.
inline void best_candidate(const FeatureMatrix& queries, const FeatureMatrix& candidates,
                           const std::vector<double>& query_norms,
                           const std::vector<double>& candidate_norms, Eigen::Index i,
                           int& best_index, double& best_score) {
  const Eigen::Index dim = queries.cols();
  const std::span<const float> q(queries.row(i).data(), dim);
  best_index = 0;
  best_score = -2.0;
  for (Eigen::Index j = 0; j < candidates.rows(); ++j) {
    const std::span<const float> c(candidates.row(j).data(), dim);
    const double s = cosine_from(dot(q, c), query_norms[i], candidate_norms[j]);
    if (s > best_score) {
      best_score = s;
      best_index = static_cast<int>(j);
    }
  }
}

}  // namespace

ArgmaxResult argmax_cosine_serial(const FeatureMatrix& queries, const FeatureMatrix& candidates) {
  check_argmax_inputs(queries, candidates);
  const auto qn = row_norms(queries);
  const auto cn = row_norms(candidates);
  check_nonzero(qn, "query");
  check_nonzero(cn, "candidate");
  ArgmaxResult out;
  out.index.resize(queries.rows());
  out.score.resize(queries.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    best_candidate(queries, candidates, qn, cn, i, out.index[i], out.score[i]);
  }
  return out;
}

ArgmaxResult argmax_cosine_parallel(const FeatureMatrix& queries,
                                    const FeatureMatrix& candidates) {
  check_argmax_inputs(queries, candidates);
  const auto qn = row_norms(queries);
  const auto cn = row_norms(candidates);
  check_nonzero(qn, "query");
  check_nonzero(cn, "candidate");
  ArgmaxResult out;
  out.index.resize(queries.rows());
  out.score.resize(queries.rows());
  const Eigen::Index rows = queries.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < rows; ++i) {
    best_candidate(queries, candidates, qn, cn, i, out.index[i], out.score[i]);
  }
  return out;
}

double max_pairwise_distance_serial(std::span<const Vec3> points) {
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      best = std::max(best, (points[i] - points[j]).squaredNorm());
    }
  }
  return std::sqrt(best);
}

double max_pairwise_distance_parallel(std::span<const Vec3> points) {
  double best = 0.0;
  const auto n = static_cast<std::ptrdiff_t>(points.size());
#pragma omp parallel for schedule(dynamic, 16) reduction(max : best)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t j = i + 1; j < n; ++j) {
      best = std::max(best, (points[i] - points[j]).squaredNorm());
    }
  }
  return std::sqrt(best);
}

}  // namespace geodistill::kernels

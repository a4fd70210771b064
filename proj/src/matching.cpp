#include "geodistill/matching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "geodistill/error.hpp"
#include "geodistill/kernels.hpp"

namespace geodistill {

// ---------------------------------------------------------------- files

void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  if (gt.source_indices.size() != gt.positions.size()) {
    fail(ErrorKind::Shape, "ground truth index/position counts differ");
  }
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "source_index,target_x,target_y,target_z\n";
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Vec3& p = gt.positions[i];
    out << gt.source_indices[i] << ',' << p.x() << ',' << p.y() << ',' << p.z() << '\n';
  }
}

GroundTruth read_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  GroundTruth gt;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.find("source_index") != std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    int idx = 0;
    double x = 0, y = 0, z = 0;
    if (!(ss >> idx >> x >> y >> z)) {
      fail(ErrorKind::Format, path.string() + ": bad row on line " + std::to_string(line_no));
    }
    gt.source_indices.push_back(idx);
    gt.positions.emplace_back(x, y, z);
  }
  return gt;
}

// ---------------------------------------------------------------- matching

Correspondence match_points(const FeatureMatrix& source, const FeatureMatrix& target) {
  const auto best = kernels::argmax_cosine_parallel(source, target);
  Correspondence corr;
  corr.source.resize(source.rows());
  for (Eigen::Index i = 0; i < source.rows(); ++i) corr.source[i] = static_cast<int>(i);
  corr.target = best.index;
  corr.score = best.score;
  return corr;
}

Correspondence match_points(const FeatureMatrix& source, const FeatureMatrix& target,
                            std::span<const int> source_subset) {
  FeatureMatrix rows(static_cast<Eigen::Index>(source_subset.size()), source.cols());
  for (std::size_t i = 0; i < source_subset.size(); ++i) {
    const int s = source_subset[i];
    if (s < 0 || s >= source.rows()) fail(ErrorKind::Index, "source index out of range");
    rows.row(static_cast<Eigen::Index>(i)) = source.row(s);
  }
  Correspondence corr = match_points(rows, target);
  corr.source.assign(source_subset.begin(), source_subset.end());
  return corr;
}

std::vector<int> evaluation_samples(const Mesh& source, std::uint64_t seed, int count) {
  return farthest_point_sampling(source.vertices, std::min(count, source.vertex_count()), seed);
}

// ---------------------------------------------------------------- metrics

std::vector<double> accuracy_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 40; ++k) t.push_back(0.0025 * k);
  return t;
}

namespace {

std::vector<double> point_errors(const Correspondence& corr, const Mesh& target,
                                 const GroundTruth& gt) {
  if (gt.size() != corr.size() || gt.positions.size() != gt.source_indices.size()) {
    fail(ErrorKind::Shape, "ground truth has " + std::to_string(gt.size()) + " points, correspondence " +
                               std::to_string(corr.size()));
  }
  std::vector<double> errors(corr.size());
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (gt.source_indices[i] != corr.source[i]) {
      fail(ErrorKind::Shape, "ground truth row " + std::to_string(i) + " is for source " +
                                 std::to_string(gt.source_indices[i]) + ", expected " +
                                 std::to_string(corr.source[i]));
    }
    const int t = corr.target[i];
    if (t < 0 || t >= target.vertex_count()) fail(ErrorKind::Index, "matched target out of range");
    errors[i] = (target.vertices[t] - gt.positions[i]).norm();
  }
  return errors;
}

double accuracy_at(const std::vector<double>& errors, double threshold) {
  std::size_t hits = 0;
  for (double e : errors) hits += e < threshold ? 1 : 0;
  return errors.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

}  // namespace

MetricReport correspondence_error(const Correspondence& corr, const Mesh& target,
                                  const GroundTruth& gt) {
  MetricReport r;
  r.point_error = point_errors(corr, target, gt);
  double sum = 0.0;
  for (double e : r.point_error) sum += e * e;
  r.err = r.point_error.empty() ? 0.0 : sum / static_cast<double>(r.point_error.size());
  return r;
}

MetricReport correspondence_accuracy(const Correspondence& corr, const Mesh& target,
                                     const GroundTruth& gt, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) fail(ErrorKind::Domain, "epsilon must lie in (0, 1]");
  MetricReport r;
  r.point_error = point_errors(corr, target, gt);
  r.epsilon = epsilon;
  r.extent = max_extent(target);
  r.acc = accuracy_at(r.point_error, epsilon * r.extent);
  for (double t : accuracy_thresholds()) r.curve.emplace_back(t, accuracy_at(r.point_error, t * r.extent));
  return r;
}

MetricReport evaluate_correspondence(const Correspondence& corr, const Mesh& target,
                                     const GroundTruth& gt, double epsilon) {
  MetricReport r = correspondence_accuracy(corr, target, gt, epsilon);
  r.err = correspondence_error(corr, target, gt).err;
  return r;
}

void write_metric_report(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "metric,value\n";
  out << "err," << report.err << '\n';
  out << "acc," << report.acc << '\n';
  out << "epsilon," << report.epsilon << '\n';
  out << "extent," << report.extent << '\n';
  out << "points," << report.point_error.size() << '\n';
}

void write_accuracy_curve(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "threshold,accuracy\n";
  for (const auto& [t, a] : report.curve) out << t << ',' << a << '\n';
}

// ---------------------------------------------------------------- k-means

namespace {

double cosine_rows(const FeatureMatrix& a, Eigen::Index i, const FeatureMatrix& b, Eigen::Index j,
                   double norm_a, double norm_b) {
  const std::span<const float> u(a.row(i).data(), a.cols());
  const std::span<const float> v(b.row(j).data(), b.cols());
  return kernels::cosine_from(kernels::dot(u, v), norm_a, norm_b);
}

double mean_cosine_distance(const FeatureMatrix& x, const FeatureMatrix& c,
                            const std::vector<int>& labels) {
  const auto xn = kernels::row_norms(x);
  const auto cn = kernels::row_norms(c);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    sum += 1.0 - cosine_rows(x, i, c, labels[i], xn[i], cn[labels[i]]);
  }
  return sum / static_cast<double>(x.rows());
}

}  // namespace

KMeansResult kmeans(const FeatureMatrix& features, int k, std::uint64_t seed, int max_rounds) {
  const auto n = static_cast<int>(features.rows());
  if (k < 1) fail(ErrorKind::Domain, "k must be positive");
  if (k > n) fail(ErrorKind::Domain, "k exceeds the number of rows");
  const FeatureMatrix x = normalize_rows(features);
  const auto xn = kernels::row_norms(x);
  std::mt19937_64 rng(seed);

  // k-means++ seeding with D = 1 - cos.
  FeatureMatrix centroids(k, x.cols());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  int pick = std::uniform_int_distribution<int>(0, n - 1)(rng);
  for (int c = 0; c < k; ++c) {
    centroids.row(c) = x.row(pick);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = std::max(0.0, 1.0 - cosine_rows(x, i, x, pick, xn[i], xn[pick]));
      nearest[i] = std::min(nearest[i], d);
      total += nearest[i] * nearest[i];
    }
    if (c + 1 == k) break;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        r -= nearest[i] * nearest[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<int>(0, n - 1)(rng);
    }
  }

  KMeansResult result;
  result.labels.assign(n, -1);
  for (int round = 0; round < max_rounds; ++round) {
    std::vector<int> labels = segment_by_centroids(x, centroids);
    // Empty clusters take the point farthest from its centroid.
    std::vector<int> sizes(k, 0);
    for (int l : labels) ++sizes[l];
    for (int c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      const auto cn = kernels::row_norms(centroids);
      int far = -1;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (sizes[labels[i]] <= 1) continue;
        const double d = 1.0 - cosine_rows(x, i, centroids, labels[i], xn[i], cn[labels[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) break;
      --sizes[labels[far]];
      labels[far] = c;
      sizes[c] = 1;
      centroids.row(c) = x.row(far);
      ++result.reseeded;
    }
    const bool converged = labels == result.labels;
    result.labels = std::move(labels);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    for (int i = 0; i < n; ++i) sums.row(result.labels[i]) += x.row(i).cast<double>();
    for (int c = 0; c < k; ++c) {
      const double norm = sums.row(c).norm();
      if (norm > 0.0) centroids.row(c) = (sums.row(c) / norm).cast<float>();
    }
    result.objective.push_back(mean_cosine_distance(x, centroids, result.labels));
    result.rounds = round + 1;
    if (converged) break;
  }
  result.centroids = centroids;
  return result;
}

std::vector<int> segment_by_centroids(const FeatureMatrix& features, const FeatureMatrix& centroids) {
  return kernels::argmax_cosine_parallel(features, centroids).index;
}

// ---------------------------------------------------------------- PCA

PcaResult pca_project(const FeatureMatrix& features, int out_dim) {
  if (out_dim < 1) fail(ErrorKind::Domain, "output dimension must be positive");
  if (features.rows() <= out_dim) fail(ErrorKind::Domain, "PCA needs more rows than output dims");
  const Eigen::MatrixXd x = features.cast<double>();
  PcaResult r;
  r.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - r.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) fail(ErrorKind::Numeric, "covariance eigendecomposition failed");
  const Eigen::VectorXd values = eig.eigenvalues();  // ascending
  const Eigen::Index d = values.size();
  const double total = std::max(values.sum(), 0.0);
  const double tiny = 1e-12 * std::max(1.0, values.cwiseAbs().maxCoeff());
  r.components = Eigen::MatrixXd::Zero(x.cols(), out_dim);
  for (int c = 0; c < out_dim; ++c) {
    const Eigen::Index src = d - 1 - c;
    const double lambda = src >= 0 ? std::max(values[src], 0.0) : 0.0;
    if (src < 0 || lambda <= tiny) {
      spdlog::warn("pca: data rank is below {}; component {} is zero-filled", out_dim, c);
      r.explained_variance.push_back(0.0);
      r.explained_ratio.push_back(0.0);
      continue;
    }
    Eigen::VectorXd v = eig.eigenvectors().col(src);
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    r.components.col(c) = v;
    r.explained_variance.push_back(lambda);
    r.explained_ratio.push_back(total > 0.0 ? lambda / total : 0.0);
  }
  r.projection = centered * r.components;
  return r;
}

// ---------------------------------------------------------------- texturing

std::vector<Color> texture_from_image(const FeatureMatrix& mesh_features,
                                      const ImageFeatureMap& image) {
  if (image.foreground_count() == 0) fail(ErrorKind::Domain, "no foreground pixels");
  const auto best = kernels::argmax_cosine_parallel(mesh_features, image.features);
  std::vector<Color> colors(best.index.size());
  for (std::size_t i = 0; i < colors.size(); ++i) {
    const auto [row, col] = image.pixels[best.index[i]];
    colors[i] = image.colors[static_cast<std::size_t>(row) * image.width + col];
  }
  return colors;
}

std::vector<Color> texture_mesh_to_mesh(const FeatureMatrix& source_features,
                                        std::span<const Color> source_colors,
                                        const FeatureMatrix& target_features) {
  if (static_cast<Eigen::Index>(source_colors.size()) != source_features.rows()) {
    fail(ErrorKind::Shape, "source colors do not match source features");
  }
  const auto best = kernels::argmax_cosine_parallel(target_features, source_features);
  std::vector<Color> colors(best.index.size());
  for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = source_colors[best.index[i]];
  return colors;
}

std::vector<Color> label_colors(std::span<const int> labels) {
  static const std::array<Color, 12> palette = {
      Color(0.894f, 0.102f, 0.110f), Color(0.216f, 0.494f, 0.722f), Color(0.302f, 0.686f, 0.290f),
      Color(0.596f, 0.306f, 0.639f), Color(1.000f, 0.498f, 0.000f), Color(1.000f, 1.000f, 0.200f),
      Color(0.651f, 0.337f, 0.157f), Color(0.969f, 0.506f, 0.749f), Color(0.600f, 0.600f, 0.600f),
      Color(0.400f, 0.761f, 0.647f), Color(0.988f, 0.553f, 0.384f), Color(0.553f, 0.627f, 0.796f)};
  std::vector<Color> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(palette[static_cast<std::size_t>(l) % palette.size()]);
  return out;
}

}  // namespace geodistill

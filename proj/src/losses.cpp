#include "geodistill/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geodistill/error.hpp"
#include "geodistill/kernels.hpp"

namespace geodistill {

namespace {

template <typename S>
double cosine_impl(std::span<const S> u, std::span<const S> v) {
  if (u.size() != v.size()) fail(ErrorKind::Shape, "cosine of vectors with different lengths");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    uv += static_cast<double>(u[k]) * static_cast<double>(v[k]);
    uu += static_cast<double>(u[k]) * static_cast<double>(u[k]);
    vv += static_cast<double>(v[k]) * static_cast<double>(v[k]);
  }
  if (!(uu > 0.0) || !(vv > 0.0)) fail(ErrorKind::Numeric, "cosine of a zero-norm vector");
  return kernels::cosine_from(uv, std::sqrt(uu), std::sqrt(vv));
}

template <typename T>
void check_anchor_inputs(const RowMatrix<T>& embedded, std::span<const int> anchors,
                         const Eigen::MatrixXd& geodesics) {
  if (geodesics.rows() != embedded.rows() ||
      geodesics.cols() != static_cast<Eigen::Index>(anchors.size())) {
    fail(ErrorKind::Shape, "geodesic matrix is " + std::to_string(geodesics.rows()) + "x" +
                               std::to_string(geodesics.cols()) + ", expected " +
                               std::to_string(embedded.rows()) + "x" +
                               std::to_string(anchors.size()));
  }
  for (int a : anchors) {
    if (a < 0 || a >= embedded.rows()) {
      fail(ErrorKind::Index, "anchor " + std::to_string(a) + " out of range");
    }
  }
}

template <typename T>
int sign_of(T x) {
  return (x > T(0)) - (x < T(0));
}

}  // namespace

double cosine_similarity(std::span<const float> u, std::span<const float> v) {
  return cosine_impl(u, v);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  return cosine_impl(u, v);
}

LossValue combined_loss(const LossWeights& weights, double contrastive, double reconstruction) {
  if (weights.contrastive < 0.0 || weights.reconstruction < 0.0) {
    fail(ErrorKind::Domain, "loss weights must be nonnegative");
  }
  if (weights.contrastive == 0.0 && weights.reconstruction == 0.0) {
    fail(ErrorKind::Domain, "loss weights must not both be zero");
  }
  return {weights.contrastive * contrastive + weights.reconstruction * reconstruction, contrastive,
          reconstruction};
}

std::string_view to_string(AblationVariant variant) {
  switch (variant) {
    case AblationVariant::Rgl: return "rgl";
    case AblationVariant::Ngl: return "ngl";
    case AblationVariant::Gsl: return "gsl";
  }
  return "?";
}

template <typename T>
double contrastive_loss(const RowMatrix<T>& embedded, std::span<const int> anchors,
                        const Eigen::MatrixXd& rescaled, RowMatrix<T>* grad,
                        LossDiagnostics* diag) {
  check_anchor_inputs(embedded, anchors, rescaled);
  const Eigen::Index n = embedded.rows();
  const auto a_count = static_cast<Eigen::Index>(anchors.size());
  const double scale = 1.0 / static_cast<double>(n * a_count);
  if (grad) grad->setZero(n, embedded.cols());
  if (diag) diag->signature.clear();
  // Anchor rows gathered once: similarities for all pairs are one product.
  RowMatrix<T> anchor_rows(a_count, embedded.cols());
  for (Eigen::Index a = 0; a < a_count; ++a) anchor_rows.row(a) = embedded.row(anchors[a]);
  const RowMatrix<T> sim = embedded * anchor_rows.transpose();
  double total = 0.0;
  RowMatrix<T> d_sim;
  if (grad) d_sim.setZero(n, a_count);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index a = 0; a < a_count; ++a) {
      const double phi = std::clamp(static_cast<double>(sim(i, a)), -1.0, 1.0);
      const double residual = rescaled(i, a) - 0.5 * (1.0 - phi);
      total += std::abs(residual);
      // Self pairs sit at residual ~0 but are constant on the sphere.
      if (diag && i != anchors[a]) diag->signature.push_back(sign_of(residual));
      // d|r|/dphi = sign(r) / 2
      if (grad) d_sim(i, a) = static_cast<T>(0.5 * scale * sign_of(residual));
    }
  }
  if (grad) {
    *grad = d_sim * anchor_rows;
    const RowMatrix<T> d_anchor = d_sim.transpose() * embedded;
    for (Eigen::Index a = 0; a < a_count; ++a) grad->row(anchors[a]) += d_anchor.row(a);
  }
  return total * scale;
}

template <typename T>
double reconstruction_loss(const RowMatrix<T>& base, const RowMatrix<T>& decoded,
                           RowMatrix<T>* grad_decoded) {
  if (base.rows() != decoded.rows() || base.cols() != decoded.cols()) {
    fail(ErrorKind::Shape, "reconstruction inputs differ in shape");
  }
  const Eigen::Index n = base.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += 1.0 - std::clamp(static_cast<double>(base.row(i).dot(decoded.row(i))), -1.0, 1.0);
  }
  if (grad_decoded) *grad_decoded = base * static_cast<T>(-1.0 / static_cast<double>(n));
  return total / static_cast<double>(n);
}

template <typename T>
double ablation_loss(AblationVariant variant, const RowMatrix<T>& embedded,
                     std::span<const int> anchors, const Eigen::MatrixXd& geodesics,
                     RowMatrix<T>* grad, LossDiagnostics* diag, int neighbors) {
  check_anchor_inputs(embedded, anchors, geodesics);
  const Eigen::Index n = embedded.rows();
  const auto a_count = static_cast<Eigen::Index>(anchors.size());
  if (grad) grad->setZero(n, embedded.cols());
  if (diag) {
    diag->signature.clear();
    diag->excluded_pairs = 0;
  }
  // Euclidean embedding distances to every anchor.
  Eigen::MatrixXd dist(n, a_count);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index a = 0; a < a_count; ++a) {
      dist(i, a) = (embedded.row(i) - embedded.row(anchors[a])).template cast<double>().norm();
    }
  }
  // Adds coef * d(dist(i,a))/d(embedding) to the gradient.
  auto push_distance_grad = [&](Eigen::Index i, Eigen::Index a, double coef) {
    if (!grad || !(dist(i, a) > 0.0)) return;
    const auto diff =
        ((embedded.row(i) - embedded.row(anchors[a])).template cast<double>() * (coef / dist(i, a)))
            .template cast<T>()
            .eval();
    grad->row(i) += diff;
    grad->row(anchors[a]) -= diff;
  };

  if (variant == AblationVariant::Rgl || variant == AblationVariant::Ngl) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index a = 0; a < a_count; ++a) {
        const double ds = geodesics(i, a);
        const double de = dist(i, a);
        if (variant == AblationVariant::Rgl) {
          if (ds < 1e-8) {
            // A coincident pair only counts as a warning when the points differ.
            if (diag && i != anchors[a]) ++diag->excluded_pairs;
            continue;
          }
          total += (de - ds) * (de - ds) / (ds * ds);
          push_distance_grad(i, a, 2.0 * (de - ds) / (ds * ds));
        } else {
          total += (de - ds) * (de - ds);
          push_distance_grad(i, a, 2.0 * (de - ds));
        }
      }
    }
    return total;
  }

  // GSL
  const int k = static_cast<int>(std::min<Eigen::Index>(neighbors, a_count));
  if (k < 1) fail(ErrorKind::Domain, "GSL needs at least one neighbor");
  double total = 0.0;
  std::vector<Eigen::Index> order(a_count);
  for (Eigen::Index i = 0; i < n; ++i) {
    order.clear();
    for (Eigen::Index a = 0; a < a_count; ++a) {
      if (anchors[a] != i) order.push_back(a);
    }
    const int kk = std::min<int>(k, static_cast<int>(order.size()));
    if (kk == 0) continue;
    std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                      [&](Eigen::Index x, Eigen::Index y) {
                        return dist(i, x) < dist(i, y) || (dist(i, x) == dist(i, y) && x < y);
                      });
    Eigen::VectorXd d(kk), m(kk);
    for (int j = 0; j < kk; ++j) {
      d[j] = dist(i, order[j]);
      m[j] = geodesics(i, order[j]);
      if (diag) diag->signature.push_back(static_cast<int>(order[j]));
    }
    const double dn = d.norm();
    const double mn = m.norm();
    if (!(dn > 0.0) || !(mn > 0.0)) {
      if (diag) ++diag->excluded_pairs;
      continue;
    }
    const double cos = d.dot(m) / (dn * mn);
    total += 1.0 - cos;
    if (grad) {
      // d(1 - cos)/dd = -(m / (|d||m|) - cos * d / |d|^2)
      const Eigen::VectorXd dcos = m / (dn * mn) - cos * d / (dn * dn);
      for (int j = 0; j < kk; ++j) {
        push_distance_grad(i, order[j], -dcos[j] / static_cast<double>(n));
      }
    }
  }
  return total / static_cast<double>(n);
}

template double contrastive_loss<float>(const RowMatrix<float>&, std::span<const int>,
                                        const Eigen::MatrixXd&, RowMatrix<float>*,
                                        LossDiagnostics*);
template double contrastive_loss<double>(const RowMatrix<double>&, std::span<const int>,
                                         const Eigen::MatrixXd&, RowMatrix<double>*,
                                         LossDiagnostics*);
template double reconstruction_loss<float>(const RowMatrix<float>&, const RowMatrix<float>&,
                                           RowMatrix<float>*);
template double reconstruction_loss<double>(const RowMatrix<double>&, const RowMatrix<double>&,
                                            RowMatrix<double>*);
template double ablation_loss<float>(AblationVariant, const RowMatrix<float>&,
                                     std::span<const int>, const Eigen::MatrixXd&,
                                     RowMatrix<float>*, LossDiagnostics*, int);
template double ablation_loss<double>(AblationVariant, const RowMatrix<double>&,
                                      std::span<const int>, const Eigen::MatrixXd&,
                                      RowMatrix<double>*, LossDiagnostics*, int);

}  // namespace geodistill

#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "geodistill/types.hpp"

namespace geodistill {

/// Cosine similarity clamped to [-1, 1]. Throws Error(Numeric) on a
/// zero-norm input and Error(Shape) on a length mismatch.
double cosine_similarity(std::span<const float> u, std::span<const float> v);
double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct LossWeights {
  double reconstruction = 1.0;
  double contrastive = 1.0;
};

/// A scalar objective plus its parts. `contrastive` holds whichever geodesic
/// term the variant uses (L_c, RGL, NGL or GSL).
struct LossValue {
  double total = 0.0;
  double contrastive = 0.0;
  double reconstruction = 0.0;
};

LossValue combined_loss(const LossWeights& weights, double contrastive, double reconstruction);

enum class AblationVariant { Rgl, Ngl, Gsl };

inline constexpr int kGslNeighbors = 8;

/// Optional by-products of a loss evaluation. `signature` records the
/// discrete choices the value depends on (residual signs, neighbor sets);
/// finite-difference checks use it to skip perturbations that cross a kink.
struct LossDiagnostics {
  std::vector<int> signature;
  int excluded_pairs = 0;
};

// Each loss returns its value and, when `grad` is non-null, writes the
// gradient with respect to its (first) matrix argument into it. Geodesic
// matrices are N x A with column a belonging to anchors[a].

/// (1/NA) sum_n sum_a | d'(n,a) - (1 - s_n . s_a) / 2 |, rows of `embedded`
/// assumed unit-norm.
template <typename T>
double contrastive_loss(const RowMatrix<T>& embedded, std::span<const int> anchors,
                        const Eigen::MatrixXd& rescaled, RowMatrix<T>* grad = nullptr,
                        LossDiagnostics* diag = nullptr);

/// (1/N) sum_n (1 - f_n . fbar_n) for unit-row matrices; gradient is taken
/// with respect to `decoded`.
template <typename T>
double reconstruction_loss(const RowMatrix<T>& base, const RowMatrix<T>& decoded,
                           RowMatrix<T>* grad_decoded = nullptr);

/// RGL: sum |dE - dS|^2 / dS^2 over pairs with dS >= 1e-8.
/// NGL: sum |dE - dS|^2.
/// GSL: (1/N) sum_i (1 - cos(d_i, m_i)) over each point's k nearest anchors in
///      embedding space (the point itself excluded).
/// dE is the Euclidean embedding distance; `geodesics` are used as given.
template <typename T>
double ablation_loss(AblationVariant variant, const RowMatrix<T>& embedded,
                     std::span<const int> anchors, const Eigen::MatrixXd& geodesics,
                     RowMatrix<T>* grad = nullptr, LossDiagnostics* diag = nullptr,
                     int neighbors = kGslNeighbors);

std::string_view to_string(AblationVariant variant);

}  // namespace geodistill

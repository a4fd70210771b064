#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geodistill/geodesics.hpp"
#include "geodistill/losses.hpp"
#include "geodistill/mesh.hpp"
#include "geodistill/nn.hpp"
#include "geodistill/types.hpp"

namespace geodistill {

enum class LossVariant { Full, OnlyLc, OnlyLr, Rgl, Ngl, Gsl };

std::string_view to_string(LossVariant variant);
/// Accepts full, only-lc, only-lr, rgl, ngl, gsl (underscores allowed).
LossVariant parse_loss_variant(std::string_view text);

/// RGL and NGL learn absolute magnitudes: unnormalized embeddings and raw
/// (unrescaled) geodesics.
bool uses_normalized_embedding(LossVariant variant);

struct TrainConfig {
  int anchor_count = 100;
  int iterations = 50000;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  LossWeights weights;
  int embed_dim = 256;
  std::uint64_t seed = 0;
  int validation_interval = 500;
  std::uint64_t validation_seed = 2024;
  LossVariant variant = LossVariant::Full;
  double ema_decay = 0.999;
  double heat_time_scale = 1.0;
  int max_vertices = 20000;
};

/// Applies "key=value" entries on top of `config`. Unknown keys and bad
/// values raise Error(Config).
TrainConfig apply_train_config(TrainConfig config, const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> train_config_entries(const TrainConfig& config);
void validate_train_config(const TrainConfig& config);

struct TrainingShape {
  std::string name;
  Mesh mesh;
  FeatureMatrix base;  // unit rows, one per vertex
};

/// One heat solver per mesh, built on first use.
class GeodesicCache {
 public:
  explicit GeodesicCache(double time_scale = 1.0) : time_scale_(time_scale) {}
  const HeatGeodesicSolver& solver(const std::string& key, const Mesh& mesh);
  std::size_t size() const { return solvers_.size(); }

 private:
  double time_scale_;
  std::map<std::string, std::unique_ptr<HeatGeodesicSolver>> solvers_;
};

/// Anchors and geodesics for one step. `rows` lists the vertices that take
/// part (all of them unless the mesh exceeds the vertex budget); anchors and
/// geodesic rows are indexed within `rows`.
struct Sample {
  std::vector<int> rows;
  std::vector<int> anchors;
  Eigen::MatrixXd geodesics;
};

/// FPS anchors with a random start drawn from `seed`, heat geodesics to
/// them, rescaled unless `rescale` is false.
Sample prepare_sample(const Mesh& mesh, const HeatGeodesicSolver& solver, int anchor_count,
                      std::uint64_t seed, bool rescale = true, int max_vertices = 20000);

/// Scalar objective of one variant on one sample and, when `grad` is given,
/// its gradient with respect to every network parameter (accumulated into
/// `grad`, which is resized and zeroed first).
template <typename T>
LossValue evaluate_objective(const nn::Autoencoder<T>& model, const RowMatrix<T>& base,
                             std::span<const int> anchors, const Eigen::MatrixXd& geodesics,
                             LossVariant variant, const LossWeights& weights,
                             std::vector<T>* grad = nullptr, LossDiagnostics* diag = nullptr);

struct LossRecord {
  int iteration = 0;
  std::string shape;
  LossValue loss;
  double validation = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHooks {
  /// Called for every objective evaluation with the shape name and whether
  /// a backward pass follows.
  std::function<void(const std::string&, bool)> on_evaluate;
  std::function<void(const LossRecord&)> on_iteration;
};

struct TrainRun {
  std::vector<LossRecord> log;
  std::vector<std::pair<int, double>> validation;  // (iteration, loss)
  std::vector<double> snapshot_losses;             // at each accepted snapshot
  nn::Checkpoint checkpoint;
};

TrainRun train(const std::vector<TrainingShape>& training,
               const std::vector<TrainingShape>& validation, const TrainConfig& config,
               const TrainHooks& hooks = {});

/// Surface-aware features from the checkpoint's deployed model. Base rows
/// are normalized first; no geodesics are involved.
FeatureMatrix embed(const nn::Checkpoint& checkpoint, const FeatureMatrix& base);

/// CSV "iteration,total,L_c,L_r,validation".
void write_loss_log(const TrainRun& run, const std::filesystem::path& path);

}  // namespace geodistill

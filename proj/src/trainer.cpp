#include "geodistill/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "geodistill/error.hpp"
#include "geodistill/features.hpp"

namespace geodistill {

std::string_view to_string(LossVariant variant) {
  switch (variant) {
    case LossVariant::Full: return "full";
    case LossVariant::OnlyLc: return "only-lc";
    case LossVariant::OnlyLr: return "only-lr";
    case LossVariant::Rgl: return "rgl";
    case LossVariant::Ngl: return "ngl";
    case LossVariant::Gsl: return "gsl";
  }
  return "?";
}

LossVariant parse_loss_variant(std::string_view text) {
  std::string s(text);
  std::replace(s.begin(), s.end(), '_', '-');
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  for (LossVariant v : {LossVariant::Full, LossVariant::OnlyLc, LossVariant::OnlyLr,
                        LossVariant::Rgl, LossVariant::Ngl, LossVariant::Gsl}) {
    if (s == to_string(v)) return v;
  }
  fail(ErrorKind::Config, "unknown loss variant '" + std::string(text) + "'");
}

bool uses_normalized_embedding(LossVariant variant) {
  return variant != LossVariant::Rgl && variant != LossVariant::Ngl;
}

// ---------------------------------------------------------------- config

namespace {

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorKind::Config, "bad value '" + value + "' for " + key);
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

TrainConfig apply_train_config(TrainConfig c, const std::map<std::string, std::string>& entries) {
  for (const auto& [key, value] : entries) {
    if (key == "anchors" || key == "anchor_count") c.anchor_count = parse_number<int>(key, value);
    else if (key == "iterations") c.iterations = parse_number<int>(key, value);
    else if (key == "learning_rate" || key == "lr") c.learning_rate = parse_number<double>(key, value);
    else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, value);
    else if (key == "w_r") c.weights.reconstruction = parse_number<double>(key, value);
    else if (key == "w_c") c.weights.contrastive = parse_number<double>(key, value);
    else if (key == "embed_dim") c.embed_dim = parse_number<int>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "validation_interval") c.validation_interval = parse_number<int>(key, value);
    else if (key == "validation_seed") c.validation_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "loss") c.variant = parse_loss_variant(value);
    else if (key == "ema_decay") c.ema_decay = parse_number<double>(key, value);
    else if (key == "heat_time_scale") c.heat_time_scale = parse_number<double>(key, value);
    else if (key == "max_vertices") c.max_vertices = parse_number<int>(key, value);
    else fail(ErrorKind::Config, "unknown train config key '" + key + "'");
  }
  return c;
}

std::map<std::string, std::string> train_config_entries(const TrainConfig& c) {
  return {{"anchors", std::to_string(c.anchor_count)},
          {"iterations", std::to_string(c.iterations)},
          {"learning_rate", format_double(c.learning_rate)},
          {"weight_decay", format_double(c.weight_decay)},
          {"w_r", format_double(c.weights.reconstruction)},
          {"w_c", format_double(c.weights.contrastive)},
          {"embed_dim", std::to_string(c.embed_dim)},
          {"seed", std::to_string(c.seed)},
          {"validation_interval", std::to_string(c.validation_interval)},
          {"validation_seed", std::to_string(c.validation_seed)},
          {"loss", std::string(to_string(c.variant))},
          {"ema_decay", format_double(c.ema_decay)},
          {"heat_time_scale", format_double(c.heat_time_scale)},
          {"max_vertices", std::to_string(c.max_vertices)}};
}

void validate_train_config(const TrainConfig& c) {
  if (c.anchor_count < 1) fail(ErrorKind::Config, "anchors must be at least 1");
  if (c.iterations < 1) fail(ErrorKind::Config, "iterations must be at least 1");
  if (!(c.learning_rate >= 0.0)) fail(ErrorKind::Config, "learning rate must be nonnegative");
  if (!(c.weight_decay >= 0.0)) fail(ErrorKind::Config, "weight decay must be nonnegative");
  if (c.embed_dim < 1) fail(ErrorKind::Config, "embed_dim must be positive");
  if (c.validation_interval < 1) fail(ErrorKind::Config, "validation interval must be positive");
  if (!(c.ema_decay >= 0.0 && c.ema_decay <= 1.0)) fail(ErrorKind::Config, "ema_decay must lie in [0, 1]");
  if (!(c.heat_time_scale > 0.0)) fail(ErrorKind::Config, "heat_time_scale must be positive");
  if (c.max_vertices < c.anchor_count) fail(ErrorKind::Config, "max_vertices must be at least the anchor count");
  if (c.weights.reconstruction < 0 || c.weights.contrastive < 0 ||
      (c.weights.reconstruction == 0 && c.weights.contrastive == 0)) {
    fail(ErrorKind::Config, "loss weights must be nonnegative and not both zero");
  }
}

// ---------------------------------------------------------------- samples

const HeatGeodesicSolver& GeodesicCache::solver(const std::string& key, const Mesh& mesh) {
  auto it = solvers_.find(key);
  if (it == solvers_.end()) {
    it = solvers_.emplace(key, std::make_unique<HeatGeodesicSolver>(mesh, time_scale_)).first;
  }
  return *it->second;
}

Sample prepare_sample(const Mesh& mesh, const HeatGeodesicSolver& solver, int anchor_count,
                      std::uint64_t seed, bool rescale, int max_vertices) {
  const int n = mesh.vertex_count();
  if (anchor_count < 1) fail(ErrorKind::Domain, "anchor count must be positive");
  if (anchor_count > n) {
    fail(ErrorKind::Domain, "anchor count " + std::to_string(anchor_count) + " exceeds vertex count " +
                                std::to_string(n));
  }
  if (solver.vertex_count() != n) fail(ErrorKind::Shape, "solver belongs to a different mesh");
  std::mt19937_64 rng(seed);
  Sample s;
  s.rows.resize(n);
  for (int i = 0; i < n; ++i) s.rows[i] = i;
  if (n > max_vertices) {
    for (int i = 0; i < max_vertices; ++i) {
      const int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(n - i));
      std::swap(s.rows[i], s.rows[j]);
    }
    s.rows.resize(max_vertices);
    std::sort(s.rows.begin(), s.rows.end());
  }
  std::vector<Vec3> points;
  points.reserve(s.rows.size());
  for (int r : s.rows) points.push_back(mesh.vertices[r]);
  s.anchors = farthest_point_sampling(points, anchor_count, rng());
  std::vector<int> anchor_vertices;
  for (int a : s.anchors) anchor_vertices.push_back(s.rows[a]);
  GeodesicField field = solver.solve(anchor_vertices);
  if (rescale) field = rescale_distances(field);
  if (static_cast<int>(s.rows.size()) == n) {
    s.geodesics = std::move(field.distances);
  } else {
    s.geodesics.resize(static_cast<Eigen::Index>(s.rows.size()), field.anchor_count());
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      s.geodesics.row(static_cast<Eigen::Index>(i)) = field.distances.row(s.rows[i]);
    }
  }
  return s;
}

// ---------------------------------------------------------------- objective

template <typename T>
LossValue evaluate_objective(const nn::Autoencoder<T>& model, const RowMatrix<T>& base,
                             std::span<const int> anchors, const Eigen::MatrixXd& geodesics,
                             LossVariant variant, const LossWeights& weights,
                             std::vector<T>* grad, LossDiagnostics* diag) {
  const bool need_geo = variant != LossVariant::OnlyLr;
  const bool need_rec = variant != LossVariant::OnlyLc;
  LossWeights w = weights;
  if (variant == LossVariant::OnlyLc) w = {0.0, 1.0};
  if (variant == LossVariant::OnlyLr) w = {1.0, 0.0};

  nn::Tape<T> enc_tape, dec_tape;
  const RowMatrix<T> embedded = model.encode(base, grad ? &enc_tape : nullptr);
  double geo = 0.0, rec = 0.0;
  RowMatrix<T> d_geo, d_decoded;
  if (need_geo) {
    RowMatrix<T>* g = grad ? &d_geo : nullptr;
    switch (variant) {
      case LossVariant::Rgl:
        geo = ablation_loss(AblationVariant::Rgl, embedded, anchors, geodesics, g, diag);
        break;
      case LossVariant::Ngl:
        geo = ablation_loss(AblationVariant::Ngl, embedded, anchors, geodesics, g, diag);
        break;
      case LossVariant::Gsl:
        geo = ablation_loss(AblationVariant::Gsl, embedded, anchors, geodesics, g, diag);
        break;
      default:
        geo = contrastive_loss(embedded, anchors, geodesics, g, diag);
        break;
    }
  }
  if (need_rec) {
    const RowMatrix<T> decoded = model.decode(embedded, grad ? &dec_tape : nullptr);
    rec = reconstruction_loss(base, decoded, grad ? &d_decoded : nullptr);
  }
  const LossValue value = combined_loss(w, geo, rec);
  if (grad) {
    grad->assign(model.parameter_count(), T(0));
    RowMatrix<T> d_embedded = RowMatrix<T>::Zero(embedded.rows(), embedded.cols());
    if (need_geo && w.contrastive != 0.0) d_embedded += static_cast<T>(w.contrastive) * d_geo;
    if (need_rec && w.reconstruction != 0.0) {
      const RowMatrix<T> scaled = static_cast<T>(w.reconstruction) * d_decoded;
      d_embedded += model.decode_backward(dec_tape, scaled, *grad);
    }
    model.encode_backward(enc_tape, d_embedded, *grad);
  }
  return value;
}

template LossValue evaluate_objective<float>(const nn::Autoencoder<float>&, const RowMatrix<float>&,
                                             std::span<const int>, const Eigen::MatrixXd&,
                                             LossVariant, const LossWeights&, std::vector<float>*,
                                             LossDiagnostics*);
template LossValue evaluate_objective<double>(const nn::Autoencoder<double>&,
                                              const RowMatrix<double>&, std::span<const int>,
                                              const Eigen::MatrixXd&, LossVariant,
                                              const LossWeights&, std::vector<double>*,
                                              LossDiagnostics*);

// ---------------------------------------------------------------- training

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

FeatureMatrix gather_rows(const FeatureMatrix& m, const std::vector<int>& rows) {
  if (static_cast<Eigen::Index>(rows.size()) == m.rows()) return m;
  FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void check_shapes(const std::vector<TrainingShape>& shapes, int dim, const char* role) {
  for (const auto& s : shapes) {
    if (s.base.rows() != s.mesh.vertex_count()) {
      fail(ErrorKind::Shape, std::string(role) + " shape '" + s.name + "' has " +
                                 std::to_string(s.base.rows()) + " feature rows for " +
                                 std::to_string(s.mesh.vertex_count()) + " vertices");
    }
    if (s.base.cols() != dim) {
      fail(ErrorKind::Shape, std::string(role) + " shape '" + s.name + "' has feature dimension " +
                                 std::to_string(s.base.cols()) + ", expected " + std::to_string(dim));
    }
  }
}

}  // namespace

TrainRun train(const std::vector<TrainingShape>& training,
               const std::vector<TrainingShape>& validation, const TrainConfig& config,
               const TrainHooks& hooks) {
  validate_train_config(config);
  if (training.empty()) fail(ErrorKind::Config, "at least one training mesh is required");
  const int dim = static_cast<int>(training.front().base.cols());
  check_shapes(training, dim, "training");
  check_shapes(validation, dim, "validation");
  std::set<std::string> names;
  for (const auto& s : training) {
    if (!names.insert(s.name).second) fail(ErrorKind::Config, "duplicate training shape '" + s.name + "'");
  }
  for (const auto& s : validation) {
    if (names.count(s.name)) {
      fail(ErrorKind::Config, "validation shape '" + s.name + "' is also a training shape");
    }
  }

  std::vector<FeatureMatrix> train_base, val_base;
  for (const auto& s : training) train_base.push_back(normalize_rows(s.base));
  for (const auto& s : validation) val_base.push_back(normalize_rows(s.base));

  const nn::Architecture arch{dim, config.embed_dim, uses_normalized_embedding(config.variant)};
  nn::Autoencoder<float> model = nn::Autoencoder<float>::initialized(arch, config.seed);
  nn::AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.weight_decay = config.weight_decay;
  nn::AdamWState<float> opt(opt_cfg, model.parameter_count());
  nn::EmaState<float> ema = nn::make_ema(model.parameters(), config.ema_decay);
  const bool rescale = uses_normalized_embedding(config.variant);

  GeodesicCache cache(config.heat_time_scale);
  std::vector<Sample> val_samples;
  for (std::size_t v = 0; v < validation.size(); ++v) {
    const auto& s = validation[v];
    auto rng = stream(config.validation_seed, v);
    val_samples.push_back(prepare_sample(s.mesh, cache.solver("val:" + s.name, s.mesh),
                                         config.anchor_count, rng(), rescale, config.max_vertices));
  }

  TrainRun run;
  std::vector<float> grad;
  spdlog::info("train: {} shapes, {} validation, variant {}, {} iterations, {} parameters",
               training.size(), validation.size(), to_string(config.variant), config.iterations,
               model.parameter_count());
  for (int it = 1; it <= config.iterations; ++it) {
    auto rng = stream(config.seed, static_cast<std::uint64_t>(it));
    const std::size_t pick = static_cast<std::size_t>(rng() % training.size());
    const TrainingShape& shape = training[pick];
    const Sample sample = prepare_sample(shape.mesh, cache.solver("train:" + shape.name, shape.mesh),
                                         config.anchor_count, rng(), rescale, config.max_vertices);
    const FeatureMatrix base = gather_rows(train_base[pick], sample.rows);
    if (hooks.on_evaluate) hooks.on_evaluate(shape.name, true);
    LossRecord rec;
    rec.iteration = it;
    rec.shape = shape.name;
    rec.loss = evaluate_objective(model, base, sample.anchors, sample.geodesics, config.variant,
                                  config.weights, &grad);
    if (!std::isfinite(rec.loss.total)) {
      fail(ErrorKind::Numeric, "non-finite loss at iteration " + std::to_string(it) + " on '" +
                                   shape.name + "' (L_c=" + std::to_string(rec.loss.contrastive) +
                                   ", L_r=" + std::to_string(rec.loss.reconstruction) + ")");
    }
    nn::adamw_step(model.parameters(), grad, opt);
    nn::ema_update(ema, model.parameters());

    if (!validation.empty() && (it % config.validation_interval == 0 || it == config.iterations)) {
      nn::Autoencoder<float> shadow(arch);
      shadow.parameters() = ema.shadow;
      double total = 0.0;
      for (std::size_t v = 0; v < validation.size(); ++v) {
        if (hooks.on_evaluate) hooks.on_evaluate(validation[v].name, false);
        const FeatureMatrix vb = gather_rows(val_base[v], val_samples[v].rows);
        total += evaluate_objective(shadow, vb, val_samples[v].anchors, val_samples[v].geodesics,
                                    config.variant, config.weights)
                     .total;
      }
      rec.validation = total / static_cast<double>(validation.size());
      run.validation.emplace_back(it, rec.validation);
      if (nn::ema_maybe_snapshot(ema, rec.validation)) run.snapshot_losses.push_back(rec.validation);
      spdlog::info("train: iteration {} loss {:.6f} validation {:.6f}", it, rec.loss.total, rec.validation);
    } else {
      spdlog::debug("train: iteration {} loss {:.6f}", it, rec.loss.total);
    }
    if (hooks.on_iteration) hooks.on_iteration(rec);
    run.log.push_back(std::move(rec));
  }
  run.checkpoint.arch = arch;
  run.checkpoint.params = model.parameters();
  run.checkpoint.optimizer = std::move(opt);
  run.checkpoint.ema = std::move(ema);
  return run;
}

FeatureMatrix embed(const nn::Checkpoint& checkpoint, const FeatureMatrix& base) {
  if (base.cols() != checkpoint.arch.input_dim) {
    fail(ErrorKind::Shape, "features have dimension " + std::to_string(base.cols()) +
                               ", checkpoint expects " + std::to_string(checkpoint.arch.input_dim));
  }
  return checkpoint.deployed_model().encode(normalize_rows(base));
}

void write_loss_log(const TrainRun& run, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(9);
  out << "iteration,total,L_c,L_r,validation\n";
  for (const auto& r : run.log) {
    out << r.iteration << ',' << r.loss.total << ',' << r.loss.contrastive << ','
        << r.loss.reconstruction << ',';
    if (!std::isnan(r.validation)) out << r.validation;
    out << '\n';
  }
}

}  // namespace geodistill

#include "geodistill/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "geodistill/error.hpp"
#include "geodistill/features.hpp"
#include "geodistill/geodesics.hpp"
#include "geodistill/gradcheck.hpp"
#include "geodistill/image.hpp"
#include "geodistill/log.hpp"
#include "geodistill/matching.hpp"
#include "geodistill/mesh.hpp"
#include "geodistill/nn.hpp"
#include "geodistill/parallel.hpp"
#include "geodistill/pose.hpp"
#include "geodistill/synth.hpp"
#include "geodistill/trainer.hpp"

namespace geodistill::cli {

namespace fs = std::filesystem;
using Settings = std::map<std::string, std::string>;

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
  Settings out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::Config, origin + ":" + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorKind::Config, origin + ":" + std::to_string(number) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

namespace {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Seeds for the independent random streams of one synthetic shape.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct Run {
  std::string command;
  fs::path out;
  Settings settings;
  nlohmann::json inputs = nlohmann::json::object();
  std::vector<std::string> outputs;

  const std::string& text(const std::string& key) const {
    const auto it = settings.find(key);
    if (it == settings.end()) fail(ErrorKind::Config, "missing setting " + key);
    return it->second;
  }
  double number(const std::string& key) const {
    const std::string& v = text(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
  }
  long long integer(const std::string& key) const {
    const std::string& v = text(key);
    try {
      std::size_t used = 0;
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Config, key + ": expected an integer, got '" + v + "'");
  }
  std::uint64_t seed() const {
    const long long s = integer("seed");
    if (s < 0) fail(ErrorKind::Config, "seed must be nonnegative");
    return static_cast<std::uint64_t>(s);
  }
  bool boolean(const std::string& key) const {
    const std::string& v = text(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    fail(ErrorKind::Config, key + ": expected a boolean, got '" + v + "'");
  }

  fs::path input(const std::string& role, const std::string& path) {
    if (path.empty()) fail(ErrorKind::Config, "missing required input --" + role);
    if (!fs::exists(path)) fail(ErrorKind::Io, "missing input " + path);
    const std::string bytes = read_file(path);
    nlohmann::json entry = {{"path", path}, {"bytes", bytes.size()}, {"fnv1a", hex64(fnv1a(bytes))}};
    if (inputs.contains(role)) {
      if (!inputs[role].is_array()) inputs[role] = nlohmann::json::array({inputs[role]});
      inputs[role].push_back(entry);
    } else {
      inputs[role] = entry;
    }
    return path;
  }
  fs::path output(const std::string& name) {
    outputs.push_back(name);
    return out / name;
  }
};

void write_manifest(const Run& run) {
  std::string config_text;
  for (const auto& [k, v] : run.settings) config_text += k + "=" + v + "\n";
  nlohmann::json m = {{"subcommand", run.command},
                      {"version", kVersion},
                      {"config", run.settings},
                      {"config_hash", hex64(fnv1a(config_text))},
                      {"inputs", run.inputs},
                      {"outputs", run.outputs}};
  if (run.settings.count("seed")) m["seed"] = run.settings.at("seed");
  std::ofstream f(run.out / "manifest.json");
  if (!f) fail(ErrorKind::Io, "cannot write manifest in " + run.out.string());
  f << m.dump(2) << '\n';
}

// ---------------------------------------------------------------- file helpers

void write_correspondences(const Correspondence& c, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "source,target,score\n";
  for (std::size_t i = 0; i < c.size(); ++i) {
    out << c.source[i] << ',' << c.target[i] << ',' << c.score[i] << '\n';
  }
}

Correspondence read_correspondences(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("source,target", 0) != 0) {
    fail(ErrorKind::Format, path.string() + ": expected header source,target,score");
  }
  Correspondence c;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream s(line);
    std::string a, b, score;
    if (!std::getline(s, a, ',') || !std::getline(s, b, ',')) {
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(row) + ": bad row");
    }
    std::getline(s, score, ',');
    try {
      c.source.push_back(std::stoi(a));
      c.target.push_back(std::stoi(b));
      c.score.push_back(score.empty() ? 0.0 : std::stod(score));
    } catch (const std::exception&) {
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(row) + ": bad number");
    }
  }
  return c;
}

void write_labels(std::span<const int> labels, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "vertex,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ',' << labels[i] << '\n';
}

FeatureMatrix to_features(const Eigen::MatrixXd& m) { return m.cast<float>(); }

std::vector<Color> pca_colors(const RowMatrix<double>& proj) {
  std::vector<Color> colors(static_cast<std::size_t>(proj.rows()), Color::Constant(0.5f));
  for (Eigen::Index c = 0; c < std::min<Eigen::Index>(3, proj.cols()); ++c) {
    const double lo = proj.col(c).minCoeff(), hi = proj.col(c).maxCoeff();
    const double span = hi > lo ? hi - lo : 1.0;
    for (Eigen::Index i = 0; i < proj.rows(); ++i) {
      colors[i][c] = static_cast<float>((proj(i, c) - lo) / span);
    }
  }
  return colors;
}

// ---------------------------------------------------------------- commands

struct Command {
  CLI::App* app = nullptr;
  Settings defaults;
  bool open_keys = false;  // train: keys are validated by the trainer
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_options;
  std::string config;
  std::string out;
  int threads = 1;
  std::map<std::string, std::string> paths;
  std::map<std::string, std::vector<std::string>> path_lists;
  std::function<void(Run&, Command&)> body;

  void setting_flag(const std::string& flag, const std::string& key, const std::string& help) {
    flag_options[key] = app->add_option(flag, flag_values[key], help);
  }
  void path(const std::string& name, const std::string& help) {
    app->add_option("--" + name, paths[name], help);
  }
  void path_list(const std::string& name, const std::string& help) {
    app->add_option("--" + name, path_lists[name], help);
  }
  const std::string& p(const std::string& name) { return paths[name]; }
};

Settings merge_settings(Command& cmd) {
  Settings s = cmd.defaults;
  if (!cmd.config.empty()) {
    if (!fs::exists(cmd.config)) fail(ErrorKind::Io, "missing input " + cmd.config);
    const Settings file = parse_config_text(read_file(cmd.config), cmd.config);
    for (const auto& [k, v] : file) {
      if (!cmd.open_keys && !s.count(k)) {
        fail(ErrorKind::Config, cmd.config + ": unknown key '" + k + "'");
      }
      s[k] = v;
    }
  }
  for (const auto& [k, opt] : cmd.flag_options) {
    if (opt->count() > 0) s[k] = cmd.flag_values[k];
  }
  return s;
}

void need(const std::string& value, const std::string& flag) {
  if (value.empty()) fail(ErrorKind::Config, "missing required input --" + flag);
}

// synth-icosphere
void run_icosphere(Run& run, Command&) {
  const auto k = run.integer("subdivisions");
  if (k < 0 || k > 7) fail(ErrorKind::Config, "subdivisions must lie in [0, 7]");
  const Mesh m = synth::make_icosphere(static_cast<int>(k), run.number("radius"));
  save_mesh(m, run.output("mesh.obj"));
}

// synth-quadruped
void run_quadruped(Run& run, Command&) {
  const std::uint64_t seed = run.seed();
  synth::QuadrupedSpec base;
  base.rings = static_cast<int>(run.integer("rings"));
  base.segments = static_cast<int>(run.integer("segments"));
  const synth::Quadruped q = synth::make_quadruped(synth::random_quadruped_spec(seed, base));
  synth::FeatureRecipe recipe;
  recipe.dim = static_cast<int>(run.integer("dim"));
  recipe.noise = run.number("noise");
  recipe.side_cue = run.number("side_cue");
  const auto kind = run.text("kind");
  if (kind == "positional") {
    recipe.kind = synth::FeatureRecipe::Kind::Positional;
  } else if (kind != "symmetric") {
    fail(ErrorKind::Config, "kind must be symmetric or positional");
  }

  save_mesh(q.mesh, run.output("mesh.obj"));
  write_features(synth::synth_base_features(q, recipe, derive_seed(seed, 1)),
                 run.output("features.saf"));
  save_skeleton(q.skeleton, run.output("skeleton.txt"));
  run.outputs.push_back("skeleton.txt.weights.saf");
  {
    std::ofstream parts(run.output("parts.csv"));
    if (!parts) fail(ErrorKind::Io, "cannot write parts.csv");
    parts << "vertex,part,side,mirror\n";
    for (int v = 0; v < q.mesh.vertex_count(); ++v) {
      parts << v << ',' << q.part[v] << ',' << static_cast<int>(q.mirror.side[v]) << ','
            << q.mirror.mirror[v] << '\n';
    }
  }
  const PoseParams pose = synth::random_pose(q, derive_seed(seed, 2), run.number("pose_magnitude"));
  Mesh posed = q.mesh;
  posed.vertices = lbs_deform(q.skeleton, pose, q.mesh.vertices);
  save_mesh(posed, run.output("posed.obj"));
  write_features(synth::synth_base_features(q, recipe, derive_seed(seed, 3)),
                 run.output("posed_features.saf"));
  write_pose_csv(pose, run.output("pose.csv"));
  const auto samples = evaluation_samples(q.mesh, derive_seed(seed, 4),
                                          std::min(kEvaluationSamples, q.mesh.vertex_count()));
  write_ground_truth(synth::ground_truth_correspondence(q.mesh, posed, samples),
                     run.output("ground_truth.csv"));
}

// geodesic
void run_geodesic(Run& run, Command& cmd) {
  const Mesh mesh = load_mesh(run.input("mesh", cmd.p("mesh")));
  const auto count = run.integer("anchors");
  if (count < 1 || count > mesh.vertex_count()) {
    fail(ErrorKind::Config, "anchors must lie in [1, vertex count]");
  }
  const auto anchors =
      farthest_point_sampling(mesh.vertices, static_cast<int>(count), run.seed());
  GeodesicField field = heat_geodesic(mesh, anchors, run.number("heat_time_scale"));
  if (run.boolean("rescale")) field = rescale_distances(field);
  write_features(field_to_matrix(field), run.output("geodesic.saf"));
  std::ofstream out(run.output("anchors.csv"));
  out << "column,vertex\n";
  for (std::size_t i = 0; i < anchors.size(); ++i) out << i << ',' << anchors[i] << '\n';
}

// train
void run_train(Run& run, Command& cmd) {
  const TrainConfig config = apply_train_config(TrainConfig{}, run.settings);
  validate_train_config(config);
  run.settings = train_config_entries(config);
  const auto& meshes = cmd.path_lists["mesh"];
  const auto& feats = cmd.path_lists["features"];
  if (meshes.empty()) fail(ErrorKind::Config, "missing required input --mesh");
  if (meshes.size() != feats.size()) {
    fail(ErrorKind::Config, "--mesh and --features must be given the same number of times");
  }
  auto load_set = [&](const std::vector<std::string>& ms, const std::vector<std::string>& fs_,
                      const std::string& mesh_role, const std::string& feat_role) {
    std::vector<TrainingShape> out;
    for (std::size_t i = 0; i < ms.size(); ++i) {
      TrainingShape s;
      s.name = fs::path(ms[i]).lexically_normal().string();
      s.mesh = load_mesh(run.input(mesh_role, ms[i]));
      s.base = normalize_rows(read_features(run.input(feat_role, fs_[i])));
      if (s.base.rows() != s.mesh.vertex_count()) {
        fail(ErrorKind::Shape, fs_[i] + " has " + std::to_string(s.base.rows()) +
                                   " rows for a mesh with " +
                                   std::to_string(s.mesh.vertex_count()) + " vertices");
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  const auto training = load_set(meshes, feats, "mesh", "features");
  const auto& vm = cmd.path_lists["val-mesh"];
  const auto& vf = cmd.path_lists["val-features"];
  if (vm.size() != vf.size()) {
    fail(ErrorKind::Config, "--val-mesh and --val-features must be given the same number of times");
  }
  const auto validation = load_set(vm, vf, "val-mesh", "val-features");
  const TrainRun result = train(training, validation, config);
  nn::save_checkpoint(result.checkpoint, run.output("checkpoint.safc"));
  write_loss_log(result, run.output("loss_log.csv"));
  std::ofstream cfg(run.output("train_config.txt"));
  for (const auto& [k, v] : run.settings) cfg << k << '=' << v << '\n';
}

// embed
void run_embed(Run& run, Command& cmd) {
  const nn::Checkpoint ck = nn::load_checkpoint(run.input("checkpoint", cmd.p("checkpoint")));
  const FeatureMatrix base = read_features(run.input("features", cmd.p("features")));
  write_features(embed(ck, base), run.output("embedding.saf"));
}

// match
void run_match(Run& run, Command& cmd) {
  const FeatureMatrix src = read_features(run.input("features", cmd.p("features")));
  const FeatureMatrix tgt = read_features(run.input("target-features", cmd.p("target-features")));
  Correspondence c;
  if (!cmd.p("ground-truth").empty()) {
    const GroundTruth gt = read_ground_truth(run.input("ground-truth", cmd.p("ground-truth")));
    c = match_points(src, tgt, gt.source_indices);
  } else {
    c = match_points(src, tgt);
  }
  write_correspondences(c, run.output("correspondences.csv"));
}

// eval
void run_eval(Run& run, Command& cmd) {
  const Correspondence c = read_correspondences(run.input("correspondences", cmd.p("correspondences")));
  const Mesh target = load_mesh(run.input("target-mesh", cmd.p("target-mesh")));
  const GroundTruth gt = read_ground_truth(run.input("ground-truth", cmd.p("ground-truth")));
  const MetricReport r = evaluate_correspondence(c, target, gt, run.number("epsilon"));
  write_metric_report(r, run.output("metrics.csv"));
  write_accuracy_curve(r, run.output("accuracy_curve.csv"));
  spdlog::info("eval: err {:.6g} acc {:.4g}% at epsilon {}", r.err, r.acc, r.epsilon);
}

// segment
void run_segment(Run& run, Command& cmd) {
  const FeatureMatrix f = read_features(run.input("features", cmd.p("features")));
  FeatureMatrix centroids;
  if (!cmd.p("centroids").empty()) {
    centroids = read_features(run.input("centroids", cmd.p("centroids")));
  } else {
    const auto k = run.integer("k");
    if (k < 1) fail(ErrorKind::Config, "k must be positive");
    centroids = kmeans(f, static_cast<int>(k), run.seed()).centroids;
  }
  const auto labels = segment_by_centroids(f, centroids);
  write_labels(labels, run.output("labels.csv"));
  write_features(centroids, run.output("centroids.saf"));
  if (!cmd.p("mesh").empty()) {
    Mesh m = load_mesh(run.input("mesh", cmd.p("mesh")));
    if (m.vertex_count() != static_cast<int>(labels.size())) {
      fail(ErrorKind::Shape, "mesh and features differ in vertex count");
    }
    m.colors = label_colors(labels);
    save_mesh(m, run.output("segmented.ply"));
  }
}

// pca
void run_pca(Run& run, Command& cmd) {
  const FeatureMatrix f = read_features(run.input("features", cmd.p("features")));
  const auto dims = run.integer("components");
  if (dims < 1) fail(ErrorKind::Config, "components must be positive");
  const PcaResult r = pca_project(f, static_cast<int>(dims));
  {
    std::ofstream out(run.output("pca.csv"));
    out.precision(17);
    out << "vertex";
    for (Eigen::Index c = 0; c < r.projection.cols(); ++c) out << ",pc" << c;
    out << '\n';
    for (Eigen::Index i = 0; i < r.projection.rows(); ++i) {
      out << i;
      for (Eigen::Index c = 0; c < r.projection.cols(); ++c) out << ',' << r.projection(i, c);
      out << '\n';
    }
  }
  {
    std::ofstream out(run.output("pca_variance.csv"));
    out.precision(17);
    out << "component,variance,ratio\n";
    for (std::size_t c = 0; c < r.explained_variance.size(); ++c) {
      out << c << ',' << r.explained_variance[c] << ',' << r.explained_ratio[c] << '\n';
    }
  }
  if (!cmd.p("mesh").empty()) {
    Mesh m = load_mesh(run.input("mesh", cmd.p("mesh")));
    if (m.vertex_count() != r.projection.rows()) {
      fail(ErrorKind::Shape, "mesh and features differ in vertex count");
    }
    m.colors = pca_colors(r.projection);
    save_mesh(m, run.output("pca.ply"));
  }
}

// texture-2d3d
void run_texture_2d3d(Run& run, Command& cmd) {
  Mesh m = load_mesh(run.input("mesh", cmd.p("mesh")));
  const FeatureMatrix f = read_features(run.input("features", cmd.p("features")));
  const auto map = read_image_feature_map(run.input("image-features", cmd.p("image-features")),
                                          run.input("mask", cmd.p("mask")),
                                          run.input("image", cmd.p("image")));
  if (f.rows() != m.vertex_count()) fail(ErrorKind::Shape, "mesh and features differ in vertex count");
  m.colors = texture_from_image(f, map);
  save_mesh(m, run.output("textured.ply"));
}

// texture-3d3d
void run_texture_3d3d(Run& run, Command& cmd) {
  const Mesh src = load_mesh(run.input("source-mesh", cmd.p("source-mesh")));
  if (!src.colors) fail(ErrorKind::Format, cmd.p("source-mesh") + " has no vertex colors");
  const FeatureMatrix sf = read_features(run.input("source-features", cmd.p("source-features")));
  Mesh m = load_mesh(run.input("mesh", cmd.p("mesh")));
  const FeatureMatrix f = read_features(run.input("features", cmd.p("features")));
  if (f.rows() != m.vertex_count() || sf.rows() != src.vertex_count()) {
    fail(ErrorKind::Shape, "mesh and features differ in vertex count");
  }
  m.colors = texture_mesh_to_mesh(sf, *src.colors, f);
  save_mesh(m, run.output("textured.ply"));
}

AlignConfig align_config(const Run& run) {
  AlignConfig c;
  c.iterations = static_cast<int>(run.integer("iterations"));
  c.learning_rate = run.number("learning_rate");
  c.w_point = run.number("w_point");
  c.w_arap = run.number("w_arap");
  c.w_smooth = run.number("w_smooth");
  c.cosine_decay = run.boolean("cosine_decay");
  return c;
}

// Pose targets from a correspondence CSV or from feature matching.
PointTargets load_targets(Run& run, Command& cmd, const std::string& targets_path) {
  if (!targets_path.empty()) return read_ground_truth(run.input("targets", targets_path));
  need(cmd.p("features"), "features");
  const FeatureMatrix sf = read_features(run.input("features", cmd.p("features")));
  const Mesh target = load_mesh(run.input("target-mesh", cmd.p("target-mesh")));
  const FeatureMatrix tf = read_features(run.input("target-features", cmd.p("target-features")));
  return targets_from_features(sf, target, tf);
}

void write_align_trace(const AlignResult& r, const fs::path& path) {
  std::ofstream out(path);
  out.precision(17);
  out << "iteration,loss\n";
  for (std::size_t i = 0; i < r.loss_trace.size(); ++i) out << i + 1 << ',' << r.loss_trace[i] << '\n';
}

// align
void run_align(Run& run, Command& cmd) {
  const Skeleton sk = load_skeleton(run.input("skeleton", cmd.p("skeleton")));
  Mesh rest = load_mesh(run.input("mesh", cmd.p("mesh")));
  const PointTargets t = load_targets(run, cmd, cmd.p("targets"));
  const AlignResult r = align_pose(sk, rest, t, align_config(run));
  write_pose_csv(r.pose, run.output("pose.csv"));
  write_align_trace(r, run.output("align_loss.csv"));
  rest.vertices = lbs_deform(sk, r.pose, rest.vertices);
  save_mesh(rest, run.output("aligned.obj"));
}

// align-seq
void run_align_seq(Run& run, Command& cmd) {
  const Skeleton sk = load_skeleton(run.input("skeleton", cmd.p("skeleton")));
  const Mesh rest = load_mesh(run.input("mesh", cmd.p("mesh")));
  const auto& files = cmd.path_lists["targets"];
  if (files.empty()) fail(ErrorKind::Config, "missing required input --targets");
  std::vector<PointTargets> frames;
  for (const auto& f : files) frames.push_back(read_ground_truth(run.input("targets", f)));
  const auto results = align_sequence(sk, rest, frames, align_config(run));
  for (std::size_t t = 0; t < results.size(); ++t) {
    std::ostringstream tag;
    tag << std::setw(3) << std::setfill('0') << t;
    write_pose_csv(results[t].pose, run.output("pose_" + tag.str() + ".csv"));
    Mesh m = rest;
    m.vertices = lbs_deform(sk, results[t].pose, rest.vertices);
    save_mesh(m, run.output("aligned_" + tag.str() + ".obj"));
  }
  write_align_trace(results.front(), run.output("align_loss.csv"));
}

// regress-skinning
void run_regress_skinning(Run& run, Command& cmd) {
  const FeatureMatrix f = read_features(run.input("features", cmd.p("features")));
  const Skeleton sk = load_skeleton(run.input("skeleton", cmd.p("skeleton")));
  if (f.rows() != sk.weights.rows()) {
    fail(ErrorKind::Shape, "features and skinning weights differ in row count");
  }
  const auto folds = kfold_split(static_cast<int>(f.rows()), static_cast<int>(run.integer("folds")),
                                 run.seed());
  SkinningConfig sc;
  sc.epochs = static_cast<int>(run.integer("epochs"));
  sc.learning_rate = run.number("learning_rate");
  sc.weight_decay = run.number("weight_decay");
  sc.seed = run.seed();
  Eigen::MatrixXd predicted(sk.weights.rows(), sk.weights.cols());
  std::ofstream report(run.output("skinning_report.csv"));
  report.precision(17);
  report << "fold,train_mse,test_mse\n";
  double total = 0.0;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    std::vector<int> train_rows;
    for (std::size_t j = 0; j < folds.size(); ++j) {
      if (j != k) train_rows.insert(train_rows.end(), folds[j].begin(), folds[j].end());
    }
    auto gather_f = [&](const std::vector<int>& rows) {
      FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), f.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = f.row(rows[i]);
      return out;
    };
    auto gather_w = [&](const std::vector<int>& rows) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), sk.weights.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = sk.weights.row(rows[i]);
      return out;
    };
    const FeatureMatrix test_f = gather_f(folds[k]);
    const SkinningResult r = regress_skinning(gather_f(train_rows), gather_w(train_rows), test_f,
                                              gather_w(folds[k]), sc);
    const Eigen::MatrixXd p = r.regressor.predict(test_f);
    for (std::size_t i = 0; i < folds[k].size(); ++i) predicted.row(folds[k][i]) = p.row(i);
    report << k << ',' << r.train_mse << ',' << r.test_mse << '\n';
    total += r.test_mse;
  }
  report << "mean,," << total / static_cast<double>(folds.size()) << '\n';
  write_features(to_features(predicted), run.output("predicted_weights.saf"));
}

// gradcheck
void run_gradcheck(Run& run, Command&) {
  gradcheck::Options opt;
  opt.step = run.number("step");
  opt.tolerance = run.number("tolerance");
  opt.parameters = static_cast<int>(run.integer("parameters"));
  opt.seed = run.seed();
  const auto results = gradcheck::run_all(opt);
  std::ofstream out(run.output("gradcheck.csv"));
  out.precision(17);
  out << "loss,checked,skipped,max_relative_error,passed\n";
  bool all = true;
  for (const auto& r : results) {
    out << r.name << ',' << r.checked << ',' << r.skipped << ',' << r.max_relative_error << ','
        << (r.passed ? 1 : 0) << '\n';
    spdlog::info("gradcheck {}: {} checked, {} skipped, max rel err {:.3g} {}", r.name, r.checked,
                 r.skipped, r.max_relative_error, r.passed ? "ok" : "FAIL");
    all = all && r.passed;
  }
  out.close();
  if (!all) fail(ErrorKind::Numeric, "gradient check failed, see gradcheck.csv");
}

Settings align_defaults() {
  const AlignConfig a;
  return {{"iterations", std::to_string(a.iterations)},
          {"learning_rate", "0.01"},
          {"w_point", "1"},
          {"w_arap", "1"},
          {"w_smooth", "0"},
          {"cosine_decay", "true"}};
}

void print_error(std::string_view kind, const std::string& message) {
  std::string flat = message;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  std::cerr << "error: kind=" << kind << " message=" << flat << std::endl;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  init_logging();
  CLI::App app{"geodistill: surface-aware feature embeddings from geodesic distillation"};
  app.name(args.empty() ? "geodistill" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::map<std::string, Command> commands;
  auto add = [&](const std::string& name, const std::string& help, Settings defaults,
                 std::function<void(Run&, Command&)> body) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.defaults = std::move(defaults);
    c.body = std::move(body);
    c.app->add_option("--out", c.out, "Output directory")->required();
    c.app->add_option("--config", c.config, "key=value config file");
    c.app->add_option("--threads", c.threads, "Worker threads (default 1)");
    if (c.defaults.count("seed")) c.setting_flag("--seed", "seed", "Random seed");
    return c;
  };

  add("synth-icosphere", "Subdivided icosphere mesh",
      {{"subdivisions", "3"}, {"radius", "1"}}, run_icosphere);
  add("synth-quadruped", "Synthetic quadruped with features, skeleton, pose and ground truth",
      {{"seed", "0"}, {"rings", "24"}, {"segments", "24"}, {"dim", "32"}, {"noise", "0.05"},
       {"side_cue", "0.007"}, {"kind", "symmetric"}, {"pose_magnitude", "0.35"}},
      run_quadruped);
  {
    Command& c = add("geodesic", "Heat-method geodesics to FPS anchors",
                     {{"seed", "0"}, {"anchors", "8"}, {"heat_time_scale", "1"}, {"rescale", "true"}},
                     run_geodesic);
    c.path("mesh", "Mesh file");
    c.setting_flag("--anchors", "anchors", "Anchor count");
  }
  {
    Command& c = add("train", "Train the surface-aware autoencoder", train_config_entries(TrainConfig{}),
                     run_train);
    c.open_keys = true;
    c.path_list("mesh", "Training mesh (repeatable)");
    c.path_list("features", "Base features per training mesh (repeatable)");
    c.path_list("val-mesh", "Validation mesh (repeatable)");
    c.path_list("val-features", "Validation features (repeatable)");
    c.setting_flag("--anchors", "anchors", "Anchor count per step");
    c.setting_flag("--loss", "loss", "full|only-lc|only-lr|rgl|ngl|gsl");
  }
  {
    Command& c = add("embed", "Apply a checkpoint to base features", {}, run_embed);
    c.path("checkpoint", "Checkpoint file");
    c.path("features", "Base features");
  }
  {
    Command& c = add("match", "Cosine nearest-neighbor correspondences", {}, run_match);
    c.path("features", "Source features");
    c.path("target-features", "Target features");
    c.path("ground-truth", "Only match the source points listed in this ground truth");
  }
  {
    Command& c = add("eval", "err and acc of a correspondence file", {{"epsilon", "0.01"}}, run_eval);
    c.path("correspondences", "Correspondence CSV from match");
    c.path("target-mesh", "Target mesh");
    c.path("ground-truth", "Ground-truth CSV");
    c.setting_flag("--epsilon", "epsilon", "Accuracy threshold as a fraction of the target extent");
  }
  {
    Command& c = add("segment", "k-means part segmentation", {{"k", "8"}, {"seed", "0"}}, run_segment);
    c.path("features", "Features to segment");
    c.path("centroids", "Reuse these centroids instead of clustering");
    c.path("mesh", "Mesh to color by segment");
    c.setting_flag("--k", "k", "Cluster count");
  }
  {
    Command& c = add("pca", "Principal-component projection", {{"components", "3"}}, run_pca);
    c.path("features", "Features");
    c.path("mesh", "Mesh to color by the projection");
  }
  {
    Command& c = add("texture-2d3d", "Color a mesh from an image through features", {}, run_texture_2d3d);
    c.path("mesh", "Mesh");
    c.path("features", "Mesh features");
    c.path("image-features", "Per-pixel SAF1 features (sidecar with height/width)");
    c.path("mask", "Foreground mask image");
    c.path("image", "Color image");
  }
  {
    Command& c = add("texture-3d3d", "Transfer vertex colors between meshes", {}, run_texture_3d3d);
    c.path("mesh", "Target mesh");
    c.path("features", "Target features");
    c.path("source-mesh", "Colored source mesh");
    c.path("source-features", "Source features");
  }
  {
    Command& c = add("align", "Fit a skeleton pose to correspondences", align_defaults(), run_align);
    c.path("skeleton", "Skeleton file");
    c.path("mesh", "Rest mesh");
    c.path("targets", "Target CSV source_index,target_x,target_y,target_z");
    c.path("features", "Rest features (when matching instead of --targets)");
    c.path("target-mesh", "Target mesh (when matching)");
    c.path("target-features", "Target features (when matching)");
  }
  {
    Settings d = align_defaults();
    d["w_smooth"] = "1";
    Command& c = add("align-seq", "Fit a pose sequence with temporal smoothing", d, run_align_seq);
    c.path("skeleton", "Skeleton file");
    c.path("mesh", "Rest mesh");
    c.path_list("targets", "Target CSV per frame (repeatable, in order)");
  }
  {
    Command& c = add("regress-skinning", "k-fold skinning-weight regression",
                     {{"folds", "5"}, {"epochs", "2000"}, {"learning_rate", "0.01"},
                      {"weight_decay", "0.01"}, {"seed", "0"}},
                     run_regress_skinning);
    c.path("features", "Per-vertex features");
    c.path("skeleton", "Skeleton with ground-truth weights");
  }
  add("gradcheck", "Finite-difference checks of every analytic gradient",
      {{"step", "0.0001"}, {"tolerance", "0.0001"}, {"parameters", "120"}, {"seed", "7"}},
      run_gradcheck);

  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return 2;
  }

  auto* sub = app.get_subcommands().front();
  Command& cmd = commands.at(sub->get_name());
  Run run;
  run.command = sub->get_name();
  run.out = cmd.out;
  try {
    if (cmd.threads < 1) fail(ErrorKind::Config, "--threads must be at least 1");
    set_thread_count(cmd.threads);
    run.settings = merge_settings(cmd);
    if (!cmd.config.empty()) run.input("config", cmd.config);
    fs::create_directories(run.out);
    cmd.body(run, cmd);
    write_manifest(run);
  } catch (const Error& e) {
    print_error(to_string(e.kind()), e.what());
    return e.kind() == ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args);
}

}  // namespace geodistill::cli

#include "geodistill/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "geodistill/error.hpp"
#include "geodistill/features.hpp"

namespace geodistill::nn {

std::vector<int> encoder_widths(int input_dim, int embed_dim) {
  if (input_dim < 1 || embed_dim < 1) fail(ErrorKind::Domain, "dimensions must be positive");
  if (embed_dim > input_dim) fail(ErrorKind::Domain, "embedding dim exceeds input dim");
  const double ratio = static_cast<double>(embed_dim) / input_dim;
  std::vector<int> widths{input_dim};
  for (int k = 1; k < kBlocksPerSide; ++k) {
    const double w = input_dim * std::pow(ratio, static_cast<double>(k) / kBlocksPerSide);
    widths.push_back(std::max(embed_dim, static_cast<int>(std::lround(w))));
  }
  widths.push_back(embed_dim);
  return widths;
}

namespace {

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

template <typename T>
void check_finite(const RowMatrix<T>& m, const char* where) {
  if (!m.allFinite()) fail(ErrorKind::Numeric, std::string("non-finite activation in ") + where);
}

}  // namespace

template <typename T>
Autoencoder<T>::Autoencoder(const Architecture& arch) : arch_(arch) {
  const std::vector<int> enc = encoder_widths(arch.input_dim, arch.embed_dim);
  std::vector<int> widths = enc;  // encoder then decoder (mirrored)
  for (int k = kBlocksPerSide - 1; k >= 0; --k) widths.push_back(enc[k]);
  std::size_t offset = 0;
  auto add = [&](const std::string& name, int rows, int cols) {
    layout_.push_back({name, offset, rows, cols});
    offset += static_cast<std::size_t>(rows) * cols;
    return static_cast<int>(layout_.size()) - 1;
  };
  for (int b = 0; b < 2 * kBlocksPerSide; ++b) {
    const int in = widths[b];
    const int out = widths[b + 1];
    const std::string prefix =
        (b < kBlocksPerSide ? "enc" : "dec") + std::to_string(b % kBlocksPerSide) + ".";
    BlockSlots s{};
    s.lin1_w = add(prefix + "lin1.w", in, in);
    s.lin1_b = add(prefix + "lin1.b", 1, in);
    s.ln_gain = add(prefix + "ln.gain", 1, in);
    s.ln_bias = add(prefix + "ln.bias", 1, in);
    s.lin2_w = add(prefix + "lin2.w", out, in);
    s.lin2_b = add(prefix + "lin2.b", 1, out);
    blocks_.push_back(s);
  }
  params_.assign(offset, T(0));
}

template <typename T>
Autoencoder<T> Autoencoder<T>::initialized(const Architecture& arch, std::uint64_t seed) {
  Autoencoder net(arch);
  std::mt19937_64 rng(seed);
  auto fill_uniform = [&](int slot, double bound) {
    const ParamSlot& s = net.layout_[slot];
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < s.size(); ++i) net.params_[s.offset + i] = static_cast<T>(dist(rng));
  };
  for (const BlockSlots& b : net.blocks_) {
    const int fan1 = net.layout_[b.lin1_w].cols;
    const int fan2 = net.layout_[b.lin2_w].cols;
    fill_uniform(b.lin1_w, std::sqrt(6.0 / fan1));
    fill_uniform(b.lin1_b, 1.0 / std::sqrt(fan1));
    fill_uniform(b.lin2_w, std::sqrt(6.0 / fan2));
    fill_uniform(b.lin2_b, 1.0 / std::sqrt(fan2));
    const ParamSlot& gain = net.layout_[b.ln_gain];
    for (std::size_t i = 0; i < gain.size(); ++i) net.params_[gain.offset + i] = T(1);
  }
  return net;
}

template <typename T>
ConstMatMap<T> Autoencoder<T>::view(int slot) const {
  const ParamSlot& s = layout_[slot];
  return ConstMatMap<T>(params_.data() + s.offset, s.rows, s.cols);
}

template <typename T>
MatMap<T> Autoencoder<T>::grad_view(std::vector<T>& grad, int slot) const {
  const ParamSlot& s = layout_[slot];
  return MatMap<T>(grad.data() + s.offset, s.rows, s.cols);
}

template <typename T>
RowMatrix<T> Autoencoder<T>::run_side(int first_block, const RowMatrix<T>& input, bool normalize,
                                      Tape<T>* tape) const {
  if (tape) {
    tape->blocks.clear();
    tape->normalized = normalize;
  }
  RowMatrix<T> x = input;
  for (int b = first_block; b < first_block + kBlocksPerSide; ++b) {
    const BlockSlots& s = blocks_[b];
    const auto w1 = view(s.lin1_w);
    const auto b1 = view(s.lin1_b);
    const auto gain = view(s.ln_gain);
    const auto bias = view(s.ln_bias);
    const auto w2 = view(s.lin2_w);
    const auto b2 = view(s.lin2_b);
    if (x.cols() != w1.cols()) {
      fail(ErrorKind::Shape, "input width " + std::to_string(x.cols()) + " does not match layer width " +
                                 std::to_string(w1.cols()));
    }
    const Eigen::Index n = x.rows();
    const Eigen::Index width = x.cols();
    RowMatrix<T> pre = x * w1.transpose();
    pre.rowwise() += b1.row(0);
    RowMatrix<T> act = pre.unaryExpr([](T z) { return z * sigmoid(z); });
    RowMatrix<T> xhat(n, width);
    RowVec<T> inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mean = act.row(i).mean();
      const T var = (act.row(i).array() - mean).square().mean();
      inv_std[i] = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
      xhat.row(i) = (act.row(i).array() - mean) * inv_std[i];
    }
    RowMatrix<T> hidden = x;
    hidden.array() += (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
    RowMatrix<T> out = hidden * w2.transpose();
    out.rowwise() += b2.row(0);
    if (tape) {
      tape->blocks.push_back({std::move(x), std::move(pre), std::move(xhat), std::move(inv_std),
                              hidden});
    }
    x = std::move(out);
  }
  check_finite(x, first_block == 0 ? "encoder" : "decoder");
  RowMatrix<T> result = x;
  if (normalize) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const T norm = x.row(i).norm();
      if (!(norm > T(0))) {
        fail(ErrorKind::Numeric, "zero row " + std::to_string(i) + " before normalization");
      }
      result.row(i) /= norm;
    }
  }
  if (tape) {
    tape->raw_output = std::move(x);
    tape->output = result;
  }
  return result;
}

template <typename T>
RowMatrix<T> Autoencoder<T>::backward_side(int first_block, const Tape<T>& tape,
                                           const RowMatrix<T>& d_output,
                                           std::vector<T>& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), T(0));
  if (d_output.rows() != tape.output.rows() || d_output.cols() != tape.output.cols()) {
    fail(ErrorKind::Shape, "gradient shape does not match recorded output");
  }
  RowMatrix<T> dy = d_output;
  if (tape.normalized) {
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const T norm = tape.raw_output.row(i).norm();
      const T proj = tape.output.row(i).dot(d_output.row(i));
      dy.row(i) = (d_output.row(i) - proj * tape.output.row(i)) / norm;
    }
  }
  for (int b = first_block + kBlocksPerSide - 1; b >= first_block; --b) {
    const BlockSlots& s = blocks_[b];
    const BlockCache<T>& c = tape.blocks[b - first_block];
    const auto w1 = view(s.lin1_w);
    const auto gain = view(s.ln_gain);
    const auto w2 = view(s.lin2_w);

    grad_view(grad, s.lin2_w) += dy.transpose() * c.hidden;
    grad_view(grad, s.lin2_b) += dy.colwise().sum();
    const RowMatrix<T> dh = dy * w2;

    grad_view(grad, s.ln_gain) += (dh.array() * c.xhat.array()).colwise().sum().matrix();
    grad_view(grad, s.ln_bias) += dh.colwise().sum();
    const RowMatrix<T> dxhat = (dh.array().rowwise() * gain.row(0).array()).matrix();
    RowMatrix<T> dpre(dh.rows(), dh.cols());
    for (Eigen::Index i = 0; i < dh.rows(); ++i) {
      const T mean_d = dxhat.row(i).mean();
      const T mean_dx = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
      const auto dact =
          (dxhat.row(i).array() - mean_d - c.xhat.row(i).array() * mean_dx) * c.inv_std[i];
      const auto sig = c.pre.row(i).array().unaryExpr([](T z) { return sigmoid(z); });
      dpre.row(i) = dact * sig * (T(1) + c.pre.row(i).array() * (T(1) - sig));
    }
    grad_view(grad, s.lin1_w) += dpre.transpose() * c.input;
    grad_view(grad, s.lin1_b) += dpre.colwise().sum();
    dy = dh + dpre * w1;
  }
  return dy;
}

template <typename T>
RowMatrix<T> Autoencoder<T>::encode(const RowMatrix<T>& input, Tape<T>* tape) const {
  if (input.cols() != arch_.input_dim) {
    fail(ErrorKind::Shape, "encoder expects dim " + std::to_string(arch_.input_dim) + ", got " +
                               std::to_string(input.cols()));
  }
  return run_side(0, input, arch_.normalize_embedding, tape);
}

template <typename T>
RowMatrix<T> Autoencoder<T>::decode(const RowMatrix<T>& embedded, Tape<T>* tape) const {
  if (embedded.cols() != arch_.embed_dim) {
    fail(ErrorKind::Shape, "decoder expects dim " + std::to_string(arch_.embed_dim) + ", got " +
                               std::to_string(embedded.cols()));
  }
  return run_side(kBlocksPerSide, embedded, true, tape);
}

template <typename T>
RowMatrix<T> Autoencoder<T>::encode_backward(const Tape<T>& tape, const RowMatrix<T>& d_output,
                                             std::vector<T>& grad) const {
  return backward_side(0, tape, d_output, grad);
}

template <typename T>
RowMatrix<T> Autoencoder<T>::decode_backward(const Tape<T>& tape, const RowMatrix<T>& d_output,
                                             std::vector<T>& grad) const {
  return backward_side(kBlocksPerSide, tape, d_output, grad);
}

template class Autoencoder<float>;
template class Autoencoder<double>;

// ---------------------------------------------------------------- AdamW

template <typename T>
void adamw_step(std::vector<T>& params, const std::vector<T>& grads, AdamWState<T>& state,
                const std::vector<std::uint8_t>* mask) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    fail(ErrorKind::Shape, "optimizer state does not match parameter count");
  }
  if (mask && mask->size() != n) fail(ErrorKind::Shape, "parameter mask size mismatch");
  const AdamWConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && !(*mask)[i]) continue;
    const double g = grads[i];
    double p = params[i];
    p -= c.learning_rate * c.weight_decay * p;
    const double m = c.beta1 * state.first_moment[i] + (1.0 - c.beta1) * g;
    const double v = c.beta2 * state.second_moment[i] + (1.0 - c.beta2) * g * g;
    state.first_moment[i] = static_cast<T>(m);
    state.second_moment[i] = static_cast<T>(v);
    p -= c.learning_rate * (m / correction1) / (std::sqrt(v / correction2) + c.epsilon);
    params[i] = static_cast<T>(p);
  }
}

template void adamw_step<float>(std::vector<float>&, const std::vector<float>&, AdamWState<float>&,
                                const std::vector<std::uint8_t>*);
template void adamw_step<double>(std::vector<double>&, const std::vector<double>&,
                                 AdamWState<double>&, const std::vector<std::uint8_t>*);

// ---------------------------------------------------------------- EMA

template <typename T>
EmaState<T> make_ema(const std::vector<T>& params, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) fail(ErrorKind::Domain, "EMA decay must lie in [0, 1]");
  EmaState<T> ema;
  ema.decay = decay;
  ema.shadow = params;
  return ema;
}

template <typename T>
void ema_update(EmaState<T>& ema, const std::vector<T>& params) {
  if (ema.shadow.size() != params.size()) fail(ErrorKind::Shape, "EMA shadow size mismatch");
  if (ema.decay == 1.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ema.shadow[i] = static_cast<T>(ema.decay * ema.shadow[i] + (1.0 - ema.decay) * params[i]);
  }
}

template <typename T>
bool ema_maybe_snapshot(EmaState<T>& ema, double validation_loss) {
  if (!(validation_loss < ema.best_loss)) return false;
  ema.best_loss = validation_loss;
  ema.best = ema.shadow;
  ++ema.snapshots;
  return true;
}

template EmaState<float> make_ema(const std::vector<float>&, double);
template EmaState<double> make_ema(const std::vector<double>&, double);
template void ema_update(EmaState<float>&, const std::vector<float>&);
template void ema_update(EmaState<double>&, const std::vector<double>&);
template bool ema_maybe_snapshot(EmaState<float>&, double);
template bool ema_maybe_snapshot(EmaState<double>&, double);

// ---------------------------------------------------------------- checkpoints

Autoencoder<float> Checkpoint::deployed_model() const {
  Autoencoder<float> net(arch);
  const std::vector<float>& source = ema.snapshots > 0 ? ema.best : ema.shadow;
  if (source.size() != net.parameter_count()) fail(ErrorKind::Shape, "checkpoint parameter count mismatch");
  net.parameters() = source;
  return net;
}

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'A', 'F', 'C'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(ErrorKind::Format, "checkpoint truncated");
  return value;
}

FeatureMatrix as_row(const std::vector<float>& v) {
  FeatureMatrix m(1, std::max<std::size_t>(v.size(), 1));
  m.setZero();
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

// Doubles and lengths travel bit-exactly as 16-bit chunks stored as small
// integral floats, which SAF1 accepts (finite) and reproduces exactly.
void push_u64(std::vector<float>& out, std::uint64_t bits) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<float>((bits >> (16 * k)) & 0xFFFFu));
}

std::uint64_t pop_u64(const float* in) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 4; ++k) {
    const float chunk = in[k];
    if (!(chunk >= 0.0f && chunk <= 65535.0f) || chunk != std::floor(chunk)) {
      fail(ErrorKind::Format, "checkpoint word is corrupt");
    }
    bits |= static_cast<std::uint64_t>(chunk) << (16 * k);
  }
  return bits;
}

FeatureMatrix pack_doubles(const std::vector<double>& values) {
  std::vector<float> words;
  for (double v : values) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(bits));
    push_u64(words, bits);
  }
  return as_row(words);
}

std::vector<double> unpack_doubles(const FeatureMatrix& m) {
  std::vector<double> values(static_cast<std::size_t>(m.size()) / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t bits = pop_u64(m.data() + 4 * i);
    std::memcpy(&values[i], &bits, sizeof(bits));
  }
  return values;
}

void write_section(std::ostream& out, const std::string& name, const FeatureMatrix& m) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_saf1(out, m);
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  const AdamWConfig& oc = ck.optimizer.config;
  const std::vector<double> meta{
      static_cast<double>(ck.arch.input_dim), static_cast<double>(ck.arch.embed_dim),
      ck.arch.normalize_embedding ? 1.0 : 0.0, static_cast<double>(ck.optimizer.step),
      oc.learning_rate, oc.beta1, oc.beta2, oc.epsilon, oc.weight_decay, ck.ema.decay,
      ck.ema.best_loss, static_cast<double>(ck.ema.snapshots)};
  // Sections carry vectors that might legitimately be empty (no snapshot
  // yet); a leading length word keeps them unambiguous.
  auto with_length = [](const std::vector<float>& v) {
    std::vector<float> out;
    out.reserve(v.size() + 4);
    push_u64(out, v.size());
    out.insert(out.end(), v.begin(), v.end());
    return as_row(out);
  };
  out.write(kCheckpointMagic, 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, 6);
  write_section(out, "meta", pack_doubles(meta));
  write_section(out, "params", with_length(ck.params));
  write_section(out, "adam.m", with_length(ck.optimizer.first_moment));
  write_section(out, "adam.v", with_length(ck.optimizer.second_moment));
  write_section(out, "ema.shadow", with_length(ck.ema.shadow));
  write_section(out, "ema.best", with_length(ck.ema.best));
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    fail(ErrorKind::Format, path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint16_t>(in);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::Version, path.string() + ": checkpoint version " + std::to_string(version) +
                                 ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto sections = get<std::uint32_t>(in);
  std::map<std::string, FeatureMatrix> found;
  for (std::uint32_t s = 0; s < sections; ++s) {
    const auto len = get<std::uint16_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) fail(ErrorKind::Format, "checkpoint truncated");
    found[name] = read_saf1(in, path.string() + " section " + name);
  }
  auto section = [&](const std::string& name) -> const FeatureMatrix& {
    const auto it = found.find(name);
    if (it == found.end()) fail(ErrorKind::Format, "checkpoint lacks section " + name);
    return it->second;
  };
  auto vec = [&](const std::string& name) {
    const FeatureMatrix& m = section(name);
    if (m.size() < 4) fail(ErrorKind::Format, "checkpoint section " + name + " is corrupt");
    const std::uint64_t len = pop_u64(m.data());
    if (len + 4 != static_cast<std::uint64_t>(m.size())) {
      fail(ErrorKind::Format, "checkpoint section " + name + " has inconsistent length");
    }
    return std::vector<float>(m.data() + 4, m.data() + 4 + len);
  };
  const std::vector<double> meta = unpack_doubles(section("meta"));
  if (meta.size() != 12) fail(ErrorKind::Format, "checkpoint meta section is corrupt");
  Checkpoint ck;
  ck.arch.input_dim = static_cast<int>(meta[0]);
  ck.arch.embed_dim = static_cast<int>(meta[1]);
  ck.arch.normalize_embedding = meta[2] != 0.0;
  ck.optimizer.step = static_cast<std::int64_t>(meta[3]);
  ck.optimizer.config = {meta[4], meta[5], meta[6], meta[7], meta[8]};
  ck.ema.decay = meta[9];
  ck.ema.best_loss = meta[10];
  ck.ema.snapshots = static_cast<std::int64_t>(meta[11]);
  ck.params = vec("params");
  ck.optimizer.first_moment = vec("adam.m");
  ck.optimizer.second_moment = vec("adam.v");
  ck.ema.shadow = vec("ema.shadow");
  ck.ema.best = vec("ema.best");
  const std::size_t expected = Autoencoder<float>(ck.arch).parameter_count();
  if (ck.params.size() != expected || ck.ema.shadow.size() != expected ||
      ck.optimizer.first_moment.size() != expected || ck.optimizer.second_moment.size() != expected ||
      (!ck.ema.best.empty() && ck.ema.best.size() != expected)) {
    fail(ErrorKind::Format, "checkpoint parameter sections do not match its architecture");
  }
  return ck;
}

}  // namespace geodistill::nn

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geodistill/types.hpp"

// Fixed-topology autoencoder with hand-written reverse mode. Every layer
// caches what its backward pass needs in a Tape; gradients are accumulated
// into a flat buffer laid out exactly like the parameters, which keeps the
// optimizer, EMA and checkpoint code independent of the network shape.
namespace geodistill::nn {

/// Widths of the three encoder blocks: {f, w1, w2, s}. Each step shrinks by
/// the same factor (s/f)^(1/3), rounded; f=2048, s=256 yields halving.
std::vector<int> encoder_widths(int input_dim, int embed_dim);

struct Architecture {
  int input_dim = 0;
  int embed_dim = 0;
  /// When false the encoder output is left unnormalized (Euclidean
  /// embeddings for the RGL/NGL/GSL ablations). The decoder always normalizes.
  bool normalize_embedding = true;

  bool operator==(const Architecture&) const = default;
};

struct ParamSlot {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

inline constexpr int kBlocksPerSide = 3;
inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Cached activations of one residual block.
template <typename T>
struct BlockCache {
  RowMatrix<T> input;   // x
  RowMatrix<T> pre;     // z = x W1^T + b1
  RowMatrix<T> xhat;    // layer-norm normalized SiLU(z)
  RowVec<T> inv_std;    // per row (stored as 1 x N)
  RowMatrix<T> hidden;  // h = x + LN(SiLU(z))
};

template <typename T>
struct Tape {
  std::vector<BlockCache<T>> blocks;
  RowMatrix<T> raw_output;  // before row normalization
  RowMatrix<T> output;
  bool normalized = false;
};

template <typename T>
class Autoencoder {
 public:
  Autoencoder() = default;
  /// Zero-filled parameters.
  explicit Autoencoder(const Architecture& arch);
  /// Uniform fan-in initialization of all affine layers; layer-norm gain 1,
  /// bias 0. Deterministic in `seed`.
  static Autoencoder initialized(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  const std::vector<ParamSlot>& layout() const { return layout_; }
  std::vector<T>& parameters() { return params_; }
  const std::vector<T>& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  template <typename U>
  Autoencoder<U> cast() const {
    Autoencoder<U> out(arch_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.parameters()[i] = static_cast<U>(params_[i]);
    }
    return out;
  }

  /// Rows are independent; `tape` may be null when no backward pass follows.
  /// Throws Error(Numeric) on a zero pre-normalization row or a non-finite
  /// activation, Error(Shape) on a width mismatch.
  RowMatrix<T> encode(const RowMatrix<T>& input, Tape<T>* tape = nullptr) const;
  RowMatrix<T> decode(const RowMatrix<T>& embedded, Tape<T>* tape = nullptr) const;

  /// Accumulates parameter gradients into `grad` (resized to the parameter
  /// count on first use) and returns the gradient w.r.t. the side's input.
  RowMatrix<T> encode_backward(const Tape<T>& tape, const RowMatrix<T>& d_output,
                               std::vector<T>& grad) const;
  RowMatrix<T> decode_backward(const Tape<T>& tape, const RowMatrix<T>& d_output,
                               std::vector<T>& grad) const;

 private:
  struct BlockSlots {
    int lin1_w, lin1_b, ln_gain, ln_bias, lin2_w, lin2_b;
  };

  RowMatrix<T> run_side(int first_block, const RowMatrix<T>& input, bool normalize,
                        Tape<T>* tape) const;
  RowMatrix<T> backward_side(int first_block, const Tape<T>& tape, const RowMatrix<T>& d_output,
                             std::vector<T>& grad) const;
  ConstMatMap<T> view(int slot) const;
  MatMap<T> grad_view(std::vector<T>& grad, int slot) const;

  Architecture arch_;
  std::vector<ParamSlot> layout_;
  std::vector<BlockSlots> blocks_;
  std::vector<T> params_;
};

// ---------------------------------------------------------------- AdamW

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct AdamWState {
  AdamWConfig config;
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::int64_t step = 0;

  AdamWState() = default;
  AdamWState(const AdamWConfig& cfg, std::size_t count)
      : config(cfg), first_moment(count, T(0)), second_moment(count, T(0)) {}
};

/// Decoupled-weight-decay Adam. `mask`, when given, freezes every parameter
/// whose entry is 0: its value and moments are left untouched.
template <typename T>
void adamw_step(std::vector<T>& params, const std::vector<T>& grads, AdamWState<T>& state,
                const std::vector<std::uint8_t>* mask = nullptr);

// ---------------------------------------------------------------- EMA

template <typename T>
struct EmaState {
  double decay = 0.999;
  std::vector<T> shadow;
  std::vector<T> best;
  double best_loss = std::numeric_limits<double>::infinity();
  std::int64_t snapshots = 0;
};

template <typename T>
EmaState<T> make_ema(const std::vector<T>& params, double decay);
/// shadow <- decay * shadow + (1 - decay) * live
template <typename T>
void ema_update(EmaState<T>& ema, const std::vector<T>& params);
/// Replaces the best snapshot when `validation_loss` is strictly lower.
template <typename T>
bool ema_maybe_snapshot(EmaState<T>& ema, double validation_loss);

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  Architecture arch;
  std::vector<float> params;
  AdamWState<float> optimizer;
  EmaState<float> ema;

  /// The deployed model: the best EMA snapshot when one exists, otherwise
  /// the EMA shadow.
  Autoencoder<float> deployed_model() const;
};

/// "SAFC", u16 version, u32 section count, then named SAF1 sections.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace geodistill::nn

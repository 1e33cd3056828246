#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "stmotion/ops.hpp"
#include "stmotion/tensor.hpp"
#include "stmotion/tensor_io.hpp"

STMOTION_BEGIN_NAMESPACE
namespace model {

enum class TauMode { softmax, sum_normalize };
enum class SpatialSharing { query_separate, all_separate, all_shared };
enum class Variant { st, vanilla_1d, full_2d };

std::string to_string(TauMode m);
std::string to_string(SpatialSharing s);
std::string to_string(Variant v);
TauMode parse_tau(const std::string& s);
SpatialSharing parse_sharing(const std::string& s);
Variant parse_variant(const std::string& s);

/// Network hyper-parameters. Defaults are the AMASS setting.
struct ModelConfig {
  std::size_t joints = 9;
  std::size_t joint_dim = 9;
  std::size_t embed = 128;   // D
  std::size_t layers = 8;    // L
  std::size_t heads = 8;     // H
  std::size_t ff_size = 256;
  std::size_t window = 120;  // T
  double dropout = 0.1;
  TauMode tau = TauMode::softmax;
  SpatialSharing sharing = SpatialSharing::query_separate;
  Variant variant = Variant::st;
  // One feed-forward + norm per attention branch instead of one after the
  // summed branches.
  bool ff_per_branch = false;

  std::size_t head_dim() const { return embed / heads; }
  /// Throws ConfigError (e.g. embed not divisible by heads).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Score entries computed per layer for one sample and one head.
struct AttentionCounters {
  std::vector<std::uint64_t> scores_per_layer;
  std::uint64_t total() const;
};

/// Attention weights of batch element 0 from one forward pass.
///   temporal[l]: [H, N, T, T]   (one causal map per joint)
///   spatial[l]:  [H, T, N, N]   (one map per frame)
///   full[l]:     [H, N*T, N*T]  (full_2d only; joint-major token order)
struct AttentionMaps {
  std::vector<nd::Tensor> temporal;
  std::vector<nd::Tensor> spatial;
  std::vector<nd::Tensor> full;
  bool empty() const { return temporal.empty() && spatial.empty() && full.empty(); }
};

/// [T, D] sinusoidal encoding: PE[t, 2k] = sin(t / 10000^(2k/D)),
/// PE[t, 2k+1] = cos(t / 10000^(2k/D)).
nd::Tensor positional_encoding(std::size_t frames, std::size_t dim);

/// Per-joint linear embedding of a joint-major window.
/// x: [N, B, T, M], weight: [N, 1, M, D], bias: [N, 1, 1, D] -> [N, B, T, D].
nd::Tensor embed_joints(const nd::Tensor& x, const nd::Tensor& weight, const nd::Tensor& bias);

/// Projection weights for one multi-head attention, all [N|1, 1, D, D]. The
/// leading axis is the joint count (per-joint weights) or 1 (shared across
/// joints). Columns h*F..(h+1)*F-1 of q, k and v belong to head h; rows of o
/// take the concatenated head outputs in the same order.
struct AttentionWeights {
  nd::Tensor q, k, v, o;
};

struct AttentionResult {
  nd::Tensor summary;  // [N, B, T, D]
  nd::Tensor weights;  // normalised attention (layout per function)
};

/// Each joint attends causally over its own past frames. weights: [N, B, H, T, T].
AttentionResult temporal_attention(const nd::Tensor& embeddings, const AttentionWeights& w, std::size_t heads,
                                   TauMode tau, std::uint64_t* score_counter = nullptr);

/// Each joint attends over all joints of the same frame. weights: [B, H, T, N, N].
AttentionResult spatial_attention(const nd::Tensor& embeddings, const AttentionWeights& w, std::size_t heads,
                                  TauMode tau, std::uint64_t* score_counter = nullptr);

/// Every joint-time token attends to all tokens at the same or earlier
/// frames. weights: [B, H, N*T, N*T] with joint-major tokens (n * T + t).
AttentionResult full_attention(const nd::Tensor& embeddings, const AttentionWeights& w, std::size_t heads,
                               TauMode tau, std::uint64_t* score_counter = nullptr);

struct FeedForwardWeights {
  nd::Tensor w1, b1, w2, b2;  // [D, ff], [ff], [ff, D], [D]
};

struct NormWeights {
  nd::Tensor gain, bias;  // [D]
};

struct BlockWeights {
  AttentionWeights temporal;  // also the full_2d attention
  AttentionWeights spatial;   // undefined for vanilla_1d and full_2d
  FeedForwardWeights ff;
  NormWeights norm;
  FeedForwardWeights ff_spatial;  // ff_per_branch only
  NormWeights norm_spatial;
};

struct BlockContext {
  const ModelConfig* config = nullptr;
  bool training = false;
  nd::Rng* rng = nullptr;
  std::uint64_t* score_counter = nullptr;
};

struct BlockResult {
  nd::Tensor output;  // [N, B, T, D]
  nd::Tensor temporal_weights;
  nd::Tensor spatial_weights;
  nd::Tensor full_weights;
};

/// One attention layer: branch summaries, 2-layer feed-forward, dropout,
/// residual and layer norm.
BlockResult attention_block(const nd::Tensor& embeddings, const BlockWeights& w, const BlockContext& ctx);

struct ForwardOptions {
  bool training = false;
  nd::Rng* rng = nullptr;  // required when training with dropout > 0
  bool keep_attention = false;
  AttentionCounters* counters = nullptr;
};

struct ForwardResult {
  nd::Tensor prediction;  // [B, T, N, 9]; row t predicts frame t + 1
  AttentionMaps maps;
};

class Model {
 public:
  /// Fresh parameters: projections uniform in +-sqrt(1/fan_in), biases zero,
  /// norm gains one, output projection zero.
  Model(ModelConfig config, std::uint64_t seed);
  /// Adopts existing parameters; names and shapes must match the config.
  Model(ModelConfig config, nd::NamedTensors parameters);

  const ModelConfig& config() const { return config_; }
  const nd::NamedTensors& parameters() const { return params_; }
  nd::Tensor& parameter(const std::string& name);
  const nd::Tensor& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Sets requires_grad on every parameter.
  void set_trainable(bool flag);
  void zero_grad();

  /// window: [B, T, N, 9] with T <= config.window. Throws NumericError naming
  /// the layer if activations become non-finite.
  ForwardResult forward(const nd::Tensor& window, const ForwardOptions& options = {}) const;

  /// Deep copy of the parameters.
  Model clone() const;

 private:
  void bind();
  void check_parameters() const;

  ModelConfig config_;
  nd::NamedTensors params_;
  std::map<std::string, std::size_t> index_;
  nd::Tensor embed_w_, embed_b_, out_w_, out_b_;
  std::vector<BlockWeights> blocks_;
};

/// Expected parameter names and shapes for a configuration.
nd::NamedTensors parameter_layout(const ModelConfig& config);

/// Called after each rollout step with the step index and that step's maps.
using AttentionObserver = std::function<void(std::size_t, const AttentionMaps&)>;

/// Autoregressive sliding-window prediction. seed: [B, Ts, N, 9] with
/// Ts <= config.window. Each predicted frame is projected onto SO(3), appended,
/// and the oldest frame dropped. Returns [B, steps, N, 9].
nd::Tensor rollout(const Model& model, const nd::Tensor& seed, std::size_t steps,
                   const AttentionObserver& observer = {});

/// CSV rows `layer,head,kind,row,col,weight`. Temporal maps are averaged over
/// joints (T x T), spatial maps are taken at the last frame (N x N); full_2d
/// maps are written with kind `spatiotemporal`. A non-empty prefix is written
/// as a leading column value on every row (used for per-step dumps).
void dump_attention(std::ostream& out, const AttentionMaps& maps, const std::string& prefix = {});
inline constexpr const char* kAttentionCsvHeader = "layer,head,kind,row,col,weight";

/// Rough peak element count of one training step, used for budget checks.
std::size_t estimate_workspace_elements(const ModelConfig& config, std::size_t batch);

/// Checkpoint: one line of JSON with the ModelConfig, then an STT1 archive.
void save_checkpoint(std::ostream& out, const Model& model);
Model load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

}  // namespace model
STMOTION_END_NAMESPACE

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sgt/channel.hpp"
#include "sgt/tensor.hpp"
#include "sgt/tokenizer.hpp"

namespace sgt {

enum class Variant {
  FullSgt,           // self-attention on both streams + cross-attention sym <- lin
  NoCrossAttention,  // encoder over constraint tokens, token-axis compression to 2 n_t
  QrBaseline,        // encoder over QR-compressed tokens
};

std::string to_string(Variant v);
Variant variant_from_string(std::string_view name);

struct SgtConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_hidden = 128;
  Variant variant = Variant::FullSgt;
  bool weight_sharing = false;
  /// Also let constraint tokens attend to symbol tokens after each cross step.
  bool bidirectional_cross = false;
  bool positional_encoding = true;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  friend bool operator==(const SgtConfig&, const SgtConfig&) = default;
};

/// Default head count: d_model / 16, at least one.
int default_heads(int d_model);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]
};

struct Norm {
  Tensor gain;
  Tensor bias;
};

struct FeedForward {
  Linear in;
  Linear out;
};

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // [d_model, d_model]
};

/// Sublayers that a variant does not use stay undefined.
struct SgtLayer {
  Norm sym_attn_norm;
  AttentionWeights sym_attn;
  Norm lin_attn_norm;
  AttentionWeights lin_attn;
  Norm cross_query_norm, cross_kv_norm;
  AttentionWeights cross_attn;
  Norm reverse_query_norm, reverse_kv_norm;
  AttentionWeights reverse_attn;
  Norm sym_ffn_norm;
  FeedForward sym_ffn;
  Norm lin_ffn_norm;
  FeedForward lin_ffn;
};

using NamedTensor = std::pair<std::string, Tensor>;

class SgtModel {
 public:
  /// Fan-in scaled uniform initialisation from `seed`.
  SgtModel(SgtConfig config, SystemDims dims, int bits_per_dim, std::uint64_t seed);

  const SgtConfig& config() const { return config_; }
  const SystemDims& dims() const { return dims_; }
  int bits_per_dim() const { return bits_per_dim_; }

  /// Number of tokens in the constraint stream (2 n_r, or 2 n_t for QR).
  Index lin_tokens() const;
  Index sym_tokens() const { return dims_.real_tx(); }

  const SgtLayer& layer(int l) const;

  /// Every learnable tensor in a fixed order with a stable dotted name.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

  /// Deep copy; parameters of the copy are independent leaves.
  SgtModel clone() const;

  FeedForward sym_embed;
  FeedForward lin_embed;
  Matrix sym_pe;
  Matrix lin_pe;
  std::vector<SgtLayer> layers;
  Norm compress_norm;
  Tensor compress;       // [2 n_t, 2 n_r], NoCrossAttention only
  Tensor compress_bias;  // [2 n_t, d_model]
  Norm out_norm;
  FeedForward head;

 private:
  SgtConfig config_;
  SystemDims dims_;
  int bits_per_dim_ = 1;
};

/// Sinusoidal table [positions, width].
Matrix sinusoidal_encoding(Index positions, Index width);

/// Tokens of several instances stacked row-wise, instance-major.
struct TokenBatch {
  Matrix lin;
  Matrix sym;
  Index count = 0;
};

TokenBatch stack_tokens(std::span<const TokenSet> sets);

/// Builds the token batch a model variant expects. `priors`, if non-empty,
/// holds one optional prior matrix per instance.
TokenBatch prepare_batch(const SgtModel& model, std::span<const MimoInstance> batch,
                         std::span<const std::optional<Matrix>> priors = {});

/// Sees the softmax weights of each attention block during a forward pass.
using LayerAttentionObserver = std::function<void(int layer, std::string_view sublayer,
                                                  Index instance, Index head, const Matrix&)>;

struct ForwardOptions {
  const LayerAttentionObserver* observer = nullptr;
};

struct Embeddings {
  Tensor sym;  // [count * 2 n_t, d_model]
  Tensor lin;  // [count * lin_tokens, d_model]
};

Tensor apply_linear(const Linear& l, const Tensor& x);
Tensor apply_ffn(const FeedForward& f, const Tensor& x);
Tensor apply_norm(const Norm& n, const Tensor& x);

/// Soft-input embedding: dedicated FFN per token family plus positional encoding.
Embeddings embed(const SgtModel& model, const TokenBatch& tokens);

/// Pre-norm residual self-attention: t + MHA(LN(t)) W_O.
Tensor self_attention(const Tensor& t, const Norm& norm, const AttentionWeights& w, Index groups,
                      Index heads, const AttentionObserver* observer = nullptr);

/// Pre-norm residual cross-attention: queries attend to keys_values; only
/// the query stream is updated.
Tensor cross_attention(const Tensor& queries, const Tensor& keys_values, const Norm& query_norm,
                       const Norm& kv_norm, const AttentionWeights& w, Index groups, Index heads,
                       const AttentionObserver* observer = nullptr);

/// Probabilities P(bit = 0), [count * 2 n_t, bits_per_dim], in (0, 1).
/// Throws NonFiniteError naming the layer on a non-finite activation.
Tensor forward(const SgtModel& model, const TokenBatch& tokens, const ForwardOptions& opts = {});

/// Single-instance convenience, [2 n_t, bits_per_dim].
Matrix forward(const SgtModel& model, const MimoInstance& inst,
               const std::optional<Matrix>& priors = std::nullopt);

/// Posterior LLRs [2 n_t, bits_per_dim], clamped to +-kLlrMax.
Matrix detect_soft(const SgtModel& model, const MimoInstance& inst,
                   const std::optional<Matrix>& priors = std::nullopt);

/// Batched inference: one LLR matrix per instance.
std::vector<Matrix> detect_soft_batch(const SgtModel& model, std::span<const MimoInstance> batch,
                                      std::span<const std::optional<Matrix>> priors = {});

// Checkpoints ----------------------------------------------------------------
//
// Layout (all integers and doubles little-endian):
//   8 bytes   magic "SGTCKPT\0"
//   u32       format version (1)
//   u64       length of the JSON header, then the header bytes:
//             {"config": {...}, "dims": {"n_t", "n_r"}, "bits_per_dim", "parameters": [names]}
//   u32       parameter count
//   per parameter: u32 name length, name bytes, u32 rows, u32 cols,
//                  rows * cols IEEE-754 binary64 values in row-major order

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& os, const SgtModel& model);
SgtModel load_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const SgtModel& model);
SgtModel load_checkpoint(const std::string& path);

}  // namespace sgt

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "falb/autograd.hpp"
#include "falb/tensor.hpp"

namespace falb {

enum class Variant { kStandard, kFrozenQK, kFrozenMLP, kMixiT, kRandomTransformer };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

/// Architecture hyperparameters of the decoder-only stack.
struct ModelConfig {
  int layers = 2;      // L
  int width = 512;     // n
  int heads = 32;      // H
  int head_dim = 0;    // n_h; 0 = width / heads
  int mlp_dim = 0;     // n_m; 0 = 4 * width
  int vocab = 256;     // V
  int max_seq = 64;    // m
  Variant variant = Variant::kStandard;
  bool causal_mixing = true;  // MixiT only
  int num_classes = 0;        // > 0 switches to a classification head

  int resolved_head_dim() const { return head_dim > 0 ? head_dim : width / heads; }
  int resolved_mlp_dim() const { return mlp_dim > 0 ? mlp_dim : 4 * width; }
  bool uses_rotary() const;
  bool has_positional_table() const;  // MixiT / RandomTransformer
  bool is_mixing() const { return variant == Variant::kMixiT; }
  void validate() const;  // H * n_h == n, m >= 1, V >= 2, ...
};

/// Named parameter tensors plus the set of paths excluded from optimization.
template <typename T>
struct ParameterStore {
  std::map<std::string, Tensor<T>> tensors;  // ordered: deterministic iteration
  std::set<std::string> frozen;

  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  bool is_frozen(const std::string& name) const { return frozen.count(name) > 0; }
  void validate() const;  // every frozen path exists
};

/// Frozen random mixing matrices of one MixiT model. `raw` is the (m x m)
/// Gaussian draw per (layer, head); `centered(layer, head)` is
/// I + raw - column-average(raw) over the allowed support. For sequences
/// shorter than m the centering is recomputed on the leading t x t block so
/// columns still sum to 1.
template <typename T>
class MixingSet {
 public:
  MixingSet() = default;
  MixingSet(int layers, int heads, int max_seq, bool causal);

  void set_raw(int layer, int head, Tensor<T> raw);
  const Tensor<T>& raw(int layer, int head) const;
  /// Full-size centered matrix (t = max_seq).
  const Tensor<T>& centered(int layer, int head) const;
  /// Centered matrix truncated to the leading t positions.
  const Tensor<T>& centered(int layer, int head, int len) const;

  int layers() const { return layers_; }
  int heads() const { return heads_; }
  int max_seq() const { return max_seq_; }
  bool causal() const { return causal_; }
  bool empty() const { return raw_.empty(); }

 private:
  int layers_ = 0, heads_ = 0, max_seq_ = 0;
  bool causal_ = true;
  std::vector<Tensor<T>> raw_;                             // [layer * heads + head]
  mutable std::vector<std::map<int, Tensor<T>>> centered_;  // per (layer, head): len -> matrix
};

/// Applies centering to a raw draw restricted to its leading len x len block.
template <typename T>
Tensor<T> center_mixing_block(const Tensor<T>& raw, int len, bool causal);

/// Initializes all weights with the variance-preserving scheme and fills the
/// frozen set for the variant. MixiT raw mixing draws are stored under
/// "layer<i>/mix/head<h>" and are always frozen.
template <typename T>
ParameterStore<T> build_model(const ModelConfig& config, uint64_t seed);

/// Rebuilds the mixing matrices from the raw draws stored in `store`.
template <typename T>
MixingSet<T> mixing_from_store(const ModelConfig& config, const ParameterStore<T>& store);

/// Fresh mixing matrices for a MixiT config (same draws as build_model).
template <typename T>
MixingSet<T> build_mixing_matrices(const ModelConfig& config, uint64_t seed);

/// Parameter leaves bound onto a tape for one forward/backward pass.
template <typename T>
struct BoundParams {
  const ModelConfig* config = nullptr;
  const MixingSet<T>* mixing = nullptr;
  std::map<std::string, Var> vars;

  /// grads_for_frozen also tracks gradients of frozen tensors (used by the
  /// gradient-check suite; training leaves it off).
  static BoundParams bind(Tape<T>& tape, const ModelConfig& config, const ParameterStore<T>& store,
                          const MixingSet<T>* mixing, bool grads_for_frozen = false);
  Var at(const std::string& name) const;
};

/// Captured per-layer state from one forward pass.
template <typename T>
struct ForwardCapture {
  std::vector<AttentionCapture<T>> attention;  // one per layer
  std::vector<Tensor<T>> activations;          // h after each block (value copies)
  bool want_activations = false;
};

/// One attention block (pre-normed input): per-head QK softmax attention with
/// optional rotary, heads concatenated then output-projected.
template <typename T>
Var standard_attention(Tape<T>& tape, Var h, const BoundParams<T>& params, int layer,
                       const SeqLayout& layout, AttentionCapture<T>* capture = nullptr);

/// MixiT block: value projection, static per-head mixing, output projection.
template <typename T>
Var mixit_attention(Tape<T>& tape, Var h, const BoundParams<T>& params, int layer,
                    const SeqLayout& layout, AttentionCapture<T>* capture = nullptr);

/// W_D (silu(W_G h) (.) W_U h)
template <typename T>
Var gated_mlp(Tape<T>& tape, Var h, const BoundParams<T>& params, int layer);

/// Full stack: embed (+ positional table when the variant has one), L blocks
/// of pre-norm attention/mixing and pre-norm gated MLP with residuals, final
/// norm, then unembedding (V x N logits) or classification head read from the
/// final position (num_classes x batch logits).
template <typename T>
Var model_forward(Tape<T>& tape, const BoundParams<T>& params,
                  const std::vector<int32_t>& tokens, const SeqLayout& layout,
                  ForwardCapture<T>* capture = nullptr);

/// Sum of element counts over non-frozen parameters.
template <typename T>
int64_t trainable_parameter_count(const ParameterStore<T>& store);

/// Deterministic parameter order (sorted names) restricted to trainable ones.
template <typename T>
std::vector<std::string> trainable_names(const ParameterStore<T>& store);

}  // namespace falb

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "falb/tensor.hpp"

namespace falb {

/// Handle to a node on a Tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Column layout of a packed batch of sequences: sample b occupies columns
/// [offsets[b], offsets[b] + lengths[b]).
struct SeqLayout {
  int batch = 0;
  std::vector<int> lengths;
  std::vector<int> offsets;
  int total = 0;

  static SeqLayout uniform(int batch, int len);
  static SeqLayout ragged(std::vector<int> lengths);
  int max_len() const;
};

/// Per-call capture of attention (or mixing) maps for diagnostics:
/// maps[sample][head] is the t x t column-stochastic matrix actually used,
/// entry (source, destination).
template <typename T>
struct AttentionCapture {
  std::vector<std::vector<Tensor<T>>> maps;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// creation order is a valid (and deterministic) topological order for the
/// backward sweep. Gradients accumulate additively into per-node grad slots.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tensor from outside the tape; requires_grad marks it for gradient
  /// accumulation in backward().
  Var leaf(Tensor<T> value, bool requires_grad = false);

  // --- elementwise / reductions ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, T c);
  Var silu(Var a);
  Var sum(Var a);

  // --- linear algebra ---
  /// (p x q) * (q x r) -> (p x r)
  Var matmul(Var a, Var b);

  // --- model building blocks ---
  /// Per-column RMS normalization with learnable gain (gain extent = rows).
  Var rms_norm(Var h, Var gain, T eps = T(1e-6));

  /// Rotary position transform applied per head block; pairs of consecutive
  /// coordinates are rotated by angle pos * base^(-2j/head_dim). Head count
  /// must divide rows and the head dim must be even.
  Var rotary(Var x, int heads, const SeqLayout& layout, double base = 10000.0);

  /// Multi-head causal softmax attention. q, k, v are (rows x total) with
  /// head h in row block [h*dh, (h+1)*dh). Scores use scale * <q_src, k_dst>
  /// with masking source > destination, softmax per destination column.
  Var causal_attention(Var q, Var k, Var v, int heads, const SeqLayout& layout, T scale,
                       AttentionCapture<T>* capture = nullptr);

  /// Static token mixing: per sample and head, out = v_block * M where
  /// M = mixer(head, len) is a constant (len x len) matrix (no gradient).
  using MixerFn = std::function<const Tensor<T>&(int head, int len)>;
  Var mixing_attention(Var v, int heads, const SeqLayout& layout, const MixerFn& mixer,
                       AttentionCapture<T>* capture = nullptr);

  /// Gathers embedding columns: emb is (n x V), tokens are column ids,
  /// result is (n x tokens.size()).
  Var embed(Var emb, std::vector<int32_t> tokens);

  /// h + positional column table (n x max_seq), position = column index
  /// within its sample.
  Var add_positional(Var h, Var pos, const SeqLayout& layout);

  /// Final column of each sample: (n x total) -> (n x batch).
  Var select_last(Var h, const SeqLayout& layout);

  /// Mean cross-entropy (natural log) over masked columns of (V x N) logits.
  /// mask[i] != 0 marks a supervised column; at least one required.
  Var cross_entropy(Var logits, std::vector<int32_t> targets, std::vector<uint8_t> mask);

  /// Populates grad slots of every requires_grad node reachable from loss.
  /// loss must be scalar; calling twice without a fresh tape is an error.
  void backward(Var loss);

  const Tensor<T>& value(Var v) const { return node(v.id).value; }
  /// Accumulated gradient; error if backward() has not touched this node.
  const Tensor<T>& grad(Var v) const;
  bool has_grad(Var v) const { return node(v.id).grad.numel() > 0; }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }

  /// When on, every op validates its output for NaN/Inf and throws.
  void set_check_finite(bool on) { check_finite_ = on; }

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  Node& node(int32_t id) { return nodes_.at(static_cast<size_t>(id)); }
  const Node& node(int32_t id) const { return nodes_.at(static_cast<size_t>(id)); }
  Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> backward,
           const char* what);
  /// Grad buffer of node id, allocating zeros on first use.
  Tensor<T>& grad_buf(int32_t id);
  void accumulate(int32_t id, const Tensor<T>& delta);

  std::deque<Node> nodes_;
  bool backward_done_ = false;
  bool check_finite_ = false;
};

using Tape32 = Tape<float>;
using Tape64 = Tape<double>;

}  // namespace falb

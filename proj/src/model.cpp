#include "falb/model.hpp"

#include <cmath>
#include <stdexcept>

#include "falb/rng.hpp"

namespace falb {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kStandard: return "standard";
    case Variant::kFrozenQK: return "frozen_qk";
    case Variant::kFrozenMLP: return "frozen_mlp";
    case Variant::kMixiT: return "mixit";
    case Variant::kRandomTransformer: return "random_transformer";
  }
  throw std::logic_error("unreachable variant");
}

Variant parse_variant(const std::string& name) {
  if (name == "standard") return Variant::kStandard;
  if (name == "frozen_qk") return Variant::kFrozenQK;
  if (name == "frozen_mlp") return Variant::kFrozenMLP;
  if (name == "mixit") return Variant::kMixiT;
  if (name == "random_transformer") return Variant::kRandomTransformer;
  throw std::invalid_argument("unknown variant: " + name);
}

bool ModelConfig::uses_rotary() const {
  return variant == Variant::kStandard || variant == Variant::kFrozenQK ||
         variant == Variant::kFrozenMLP;
}

bool ModelConfig::has_positional_table() const {
  return variant == Variant::kMixiT || variant == Variant::kRandomTransformer;
}

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("config: layers must be >= 1");
  if (width < 1 || heads < 1) throw std::invalid_argument("config: width/heads must be >= 1");
  if (heads * resolved_head_dim() != width)
    throw std::invalid_argument("config: heads * head_dim must equal width");
  if (uses_rotary() && resolved_head_dim() % 2 != 0)
    throw std::invalid_argument("config: rotary needs an even head_dim");
  if (resolved_mlp_dim() < 1) throw std::invalid_argument("config: mlp_dim must be >= 1");
  if (max_seq < 1) throw std::invalid_argument("config: max_seq must be >= 1");
  if (vocab < 2) throw std::invalid_argument("config: vocab must be >= 2");
  if (num_classes < 0 || num_classes == 1)
    throw std::invalid_argument("config: num_classes must be 0 or >= 2");
}

template <typename T>
const Tensor<T>& ParameterStore<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("parameter not found: " + name);
  return it->second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("parameter not found: " + name);
  return it->second;
}

template <typename T>
void ParameterStore<T>::validate() const {
  for (const std::string& name : frozen)
    if (tensors.find(name) == tensors.end())
      throw std::logic_error("frozen path without tensor: " + name);
}

template <typename T>
Tensor<T> center_mixing_block(const Tensor<T>& raw, int len, bool causal) {
  if (len < 1 || len > raw.rows()) throw std::invalid_argument("mixing: bad block length");
  Tensor<T> out({len, len});
  for (int a = 0; a < len; ++a) {  // destination column
    int support = causal ? a + 1 : len;
    T mean = 0;
    for (int s = 0; s < support; ++s) mean += raw(s, a);
    mean /= static_cast<T>(support);
    for (int s = 0; s < support; ++s)
      out(s, a) = (s == a ? T(1) : T(0)) + raw(s, a) - mean;
    // rows past the causal support stay exactly 0
  }
  return out;
}

template <typename T>
MixingSet<T>::MixingSet(int layers, int heads, int max_seq, bool causal)
    : layers_(layers), heads_(heads), max_seq_(max_seq), causal_(causal) {
  raw_.resize(static_cast<size_t>(layers) * heads);
  centered_.resize(raw_.size());
}

template <typename T>
void MixingSet<T>::set_raw(int layer, int head, Tensor<T> raw) {
  if (raw.rows() != max_seq_ || raw.cols() != max_seq_)
    throw std::invalid_argument("mixing: raw extent mismatch");
  raw_[static_cast<size_t>(layer) * heads_ + head] = std::move(raw);
}

template <typename T>
const Tensor<T>& MixingSet<T>::raw(int layer, int head) const {
  return raw_.at(static_cast<size_t>(layer) * heads_ + head);
}

template <typename T>
const Tensor<T>& MixingSet<T>::centered(int layer, int head) const {
  return centered(layer, head, max_seq_);
}

template <typename T>
const Tensor<T>& MixingSet<T>::centered(int layer, int head, int len) const {
  if (len > max_seq_)
    throw std::invalid_argument("mixing: sequence longer than mixing matrix (" +
                                std::to_string(len) + " > " + std::to_string(max_seq_) + ")");
  auto& cache = centered_[static_cast<size_t>(layer) * heads_ + head];
  auto it = cache.find(len);
  if (it == cache.end())
    it = cache.emplace(len, center_mixing_block(raw(layer, head), len, causal_)).first;
  return it->second;
}

namespace {

std::string layer_key(int layer, const std::string& leaf) {
  return "layer" + std::to_string(layer) + "/" + leaf;
}

}  // namespace

template <typename T>
ParameterStore<T> build_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ParameterStore<T> store;
  int n = config.width, V = config.vocab, nm = config.resolved_mlp_dim();
  double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  double inv_sqrt_nm = 1.0 / std::sqrt(static_cast<double>(nm));

  auto init = [&](const std::string& name, Shape shape, double std) {
    RngStream rng(seed, "init/" + name);
    store.tensors.emplace(name, gaussian_init<T>(shape, std, rng));
  };

  init("emb", {n, V}, 1.0);
  if (config.has_positional_table()) init("pos", {n, config.max_seq}, 1.0);
  for (int l = 0; l < config.layers; ++l) {
    if (!config.is_mixing()) {
      init(layer_key(l, "attn/Wq"), {n, n}, inv_sqrt_n);
      init(layer_key(l, "attn/Wk"), {n, n}, inv_sqrt_n);
    }
    init(layer_key(l, "attn/Wv"), {n, n}, inv_sqrt_n);
    init(layer_key(l, "attn/Wo"), {n, n}, inv_sqrt_n);
    store.tensors.emplace(layer_key(l, "attn_norm"), Tensor<T>::full({n}, T(1)));
    init(layer_key(l, "mlp/Wg"), {nm, n}, inv_sqrt_n);
    init(layer_key(l, "mlp/Wu"), {nm, n}, inv_sqrt_n);
    init(layer_key(l, "mlp/Wd"), {n, nm}, inv_sqrt_nm);
    store.tensors.emplace(layer_key(l, "mlp_norm"), Tensor<T>::full({n}, T(1)));
    if (config.is_mixing()) {
      double std_mix = 1.0 / std::sqrt(static_cast<double>(n) * config.max_seq);
      for (int h = 0; h < config.heads; ++h) {
        std::string name = layer_key(l, "mix/head" + std::to_string(h));
        init(name, {config.max_seq, config.max_seq}, std_mix);
        store.frozen.insert(name);
      }
    }
  }
  store.tensors.emplace("final_norm", Tensor<T>::full({n}, T(1)));
  if (config.num_classes > 0) init("cls_head", {config.num_classes, n}, inv_sqrt_n);
  init("unembed", {V, n}, inv_sqrt_n);

  switch (config.variant) {
    case Variant::kStandard:
      break;
    case Variant::kFrozenQK:
      for (int l = 0; l < config.layers; ++l) {
        store.frozen.insert(layer_key(l, "attn/Wq"));
        store.frozen.insert(layer_key(l, "attn/Wk"));
      }
      break;
    case Variant::kFrozenMLP:
      for (int l = 0; l < config.layers; ++l) {
        store.frozen.insert(layer_key(l, "mlp/Wg"));
        store.frozen.insert(layer_key(l, "mlp/Wu"));
        store.frozen.insert(layer_key(l, "mlp/Wd"));
      }
      break;
    case Variant::kMixiT:
      break;  // only the mixing draws, already frozen above
    case Variant::kRandomTransformer:
      for (const auto& [name, tensor] : store.tensors) {
        (void)tensor;
        if (name != "emb" && name != "unembed" && name != "pos" && name != "cls_head")
          store.frozen.insert(name);
      }
      break;
  }
  store.validate();
  return store;
}

template <typename T>
MixingSet<T> mixing_from_store(const ModelConfig& config, const ParameterStore<T>& store) {
  if (!config.is_mixing()) return MixingSet<T>();
  MixingSet<T> set(config.layers, config.heads, config.max_seq, config.causal_mixing);
  for (int l = 0; l < config.layers; ++l)
    for (int h = 0; h < config.heads; ++h)
      set.set_raw(l, h, store.at(layer_key(l, "mix/head" + std::to_string(h))));
  return set;
}

template <typename T>
MixingSet<T> build_mixing_matrices(const ModelConfig& config, uint64_t seed) {
  if (!config.is_mixing()) throw std::invalid_argument("mixing matrices need the mixit variant");
  return mixing_from_store(config, build_model<T>(config, seed));
}

template <typename T>
BoundParams<T> BoundParams<T>::bind(Tape<T>& tape, const ModelConfig& config,
                                    const ParameterStore<T>& store, const MixingSet<T>* mixing,
                                    bool grads_for_frozen) {
  BoundParams<T> bound;
  bound.config = &config;
  bound.mixing = mixing;
  for (const auto& [name, tensor] : store.tensors) {
    if (name.find("/mix/") != std::string::npos) continue;  // constants, never leaves
    bool rg = grads_for_frozen || !store.is_frozen(name);
    bound.vars.emplace(name, tape.leaf(tensor, rg));
  }
  return bound;
}

template <typename T>
Var BoundParams<T>::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::out_of_range("bound parameter not found: " + name);
  return it->second;
}

template <typename T>
Var standard_attention(Tape<T>& tape, Var h, const BoundParams<T>& params, int layer,
                       const SeqLayout& layout, AttentionCapture<T>* capture) {
  const ModelConfig& cfg = *params.config;
  Var q = tape.matmul(params.at(layer_key(layer, "attn/Wq")), h);
  Var k = tape.matmul(params.at(layer_key(layer, "attn/Wk")), h);
  Var v = tape.matmul(params.at(layer_key(layer, "attn/Wv")), h);
  if (cfg.uses_rotary()) {
    q = tape.rotary(q, cfg.heads, layout);
    k = tape.rotary(k, cfg.heads, layout);
  }
  T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.resolved_head_dim())));
  Var att = tape.causal_attention(q, k, v, cfg.heads, layout, scale, capture);
  return tape.matmul(params.at(layer_key(layer, "attn/Wo")), att);
}

template <typename T>
Var mixit_attention(Tape<T>& tape, Var h, const BoundParams<T>& params, int layer,
                    const SeqLayout& layout, AttentionCapture<T>* capture) {
  const ModelConfig& cfg = *params.config;
  if (params.mixing == nullptr || params.mixing->empty())
    throw std::logic_error("mixit_attention: mixing matrices not built");
  Var v = tape.matmul(params.at(layer_key(layer, "attn/Wv")), h);
  const MixingSet<T>* mix = params.mixing;
  auto mixer = [mix, layer](int head, int len) -> const Tensor<T>& {
    return mix->centered(layer, head, len);
  };
  Var mixed = tape.mixing_attention(v, cfg.heads, layout, mixer, capture);
  return tape.matmul(params.at(layer_key(layer, "attn/Wo")), mixed);
}

template <typename T>
Var gated_mlp(Tape<T>& tape, Var h, const BoundParams<T>& params, int layer) {
  Var gate = tape.silu(tape.matmul(params.at(layer_key(layer, "mlp/Wg")), h));
  Var up = tape.matmul(params.at(layer_key(layer, "mlp/Wu")), h);
  return tape.matmul(params.at(layer_key(layer, "mlp/Wd")), tape.hadamard(gate, up));
}

template <typename T>
Var model_forward(Tape<T>& tape, const BoundParams<T>& params,
                  const std::vector<int32_t>& tokens, const SeqLayout& layout,
                  ForwardCapture<T>* capture) {
  const ModelConfig& cfg = *params.config;
  if (static_cast<int>(tokens.size()) != layout.total)
    throw std::invalid_argument("forward: token count does not match layout");
  if (layout.max_len() > cfg.max_seq)
    throw std::invalid_argument("forward: sequence longer than max_seq");

  Var h = tape.embed(params.at("emb"), tokens);
  if (cfg.has_positional_table()) h = tape.add_positional(h, params.at("pos"), layout);

  if (capture) capture->attention.assign(cfg.layers, {});
  for (int l = 0; l < cfg.layers; ++l) {
    AttentionCapture<T>* att_cap = capture ? &capture->attention[l] : nullptr;
    Var normed = tape.rms_norm(h, params.at(layer_key(l, "attn_norm")));
    Var att = cfg.is_mixing() ? mixit_attention(tape, normed, params, l, layout, att_cap)
                              : standard_attention(tape, normed, params, l, layout, att_cap);
    h = tape.add(h, att);
    Var normed2 = tape.rms_norm(h, params.at(layer_key(l, "mlp_norm")));
    h = tape.add(h, gated_mlp(tape, normed2, params, l));
    if (capture && capture->want_activations) capture->activations.push_back(tape.value(h));
  }
  Var final_h = tape.rms_norm(h, params.at("final_norm"));
  if (cfg.num_classes > 0)
    return tape.matmul(params.at("cls_head"), tape.select_last(final_h, layout));
  return tape.matmul(params.at("unembed"), final_h);
}

template <typename T>
int64_t trainable_parameter_count(const ParameterStore<T>& store) {
  int64_t count = 0;
  for (const auto& [name, tensor] : store.tensors)
    if (!store.is_frozen(name)) count += tensor.numel();
  return count;
}

template <typename T>
std::vector<std::string> trainable_names(const ParameterStore<T>& store) {
  std::vector<std::string> names;
  for (const auto& [name, tensor] : store.tensors) {
    (void)tensor;
    if (!store.is_frozen(name)) names.push_back(name);
  }
  return names;
}

#define FALB_INSTANTIATE(T)                                                                     \
  template struct ParameterStore<T>;                                                            \
  template class MixingSet<T>;                                                                  \
  template Tensor<T> center_mixing_block<T>(const Tensor<T>&, int, bool);                       \
  template ParameterStore<T> build_model<T>(const ModelConfig&, uint64_t);                      \
  template MixingSet<T> mixing_from_store<T>(const ModelConfig&, const ParameterStore<T>&);     \
  template MixingSet<T> build_mixing_matrices<T>(const ModelConfig&, uint64_t);                 \
  template struct BoundParams<T>;                                                               \
  template Var standard_attention<T>(Tape<T>&, Var, const BoundParams<T>&, int,                 \
                                     const SeqLayout&, AttentionCapture<T>*);                   \
  template Var mixit_attention<T>(Tape<T>&, Var, const BoundParams<T>&, int, const SeqLayout&,  \
                                  AttentionCapture<T>*);                                        \
  template Var gated_mlp<T>(Tape<T>&, Var, const BoundParams<T>&, int);                         \
  template Var model_forward<T>(Tape<T>&, const BoundParams<T>&, const std::vector<int32_t>&,   \
                                const SeqLayout&, ForwardCapture<T>*);                          \
  template int64_t trainable_parameter_count<T>(const ParameterStore<T>&);                      \
  template std::vector<std::string> trainable_names<T>(const ParameterStore<T>&);

FALB_INSTANTIATE(float)
FALB_INSTANTIATE(double)
#undef FALB_INSTANTIATE

}  // namespace falb

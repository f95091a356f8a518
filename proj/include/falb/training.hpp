#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "falb/model.hpp"
#include "falb/tasks.hpp"

namespace falb::train {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double eps = 1e-8;
  int warmup_steps = 100;  // linear warmup, then constant
  int batch_size = 256;
  int64_t steps = 10000;
  double grad_clip = 0.0;  // 0 = off (global-norm clip otherwise)

  void validate() const;
};

/// Adaptive-moment state; accumulators exist only for non-frozen parameters.
template <typename T>
struct TrainState {
  int64_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  double last_loss = 0.0;

  static TrainState init(const ParameterStore<T>& store);
};

/// Packed batch of samples ready for the forward pass.
struct Batch {
  std::vector<int32_t> tokens;
  std::vector<int32_t> targets;  // class labels when classification
  std::vector<uint8_t> mask;
  SeqLayout layout;
  bool classification = false;
};

Batch pack_batch(const std::vector<const tasks::Sample*>& samples, bool classification);

/// Deterministic batch for a given step: sample indices are a pure function
/// of (seed, step), so resumed runs reproduce the data order exactly.
Batch batch_for_step(const tasks::Dataset& data, uint64_t seed, int64_t step, int batch_size);

/// Thrown when the loss goes non-finite; carries a diagnostic dump.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

/// One optimizer step: masked cross-entropy, backward sweep, decoupled
/// weight-decay adaptive-moment update on non-frozen parameters only.
/// Returns the batch loss.
template <typename T>
double train_step(const ModelConfig& config, ParameterStore<T>& store, const MixingSet<T>* mixing,
                  TrainState<T>& state, const Batch& batch, const OptimizerConfig& opt);

/// The bias-corrected adaptive-moment update applied to one tensor:
/// m,v accumulate the (clipped) gradient, param steps by
/// lr_now * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param).
template <typename T>
void adam_apply(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                int64_t step_now, const OptimizerConfig& opt, double lr_now, double clip_scale);

struct Accuracy {
  double token_acc = 0.0;
  double sequence_acc = 0.0;
  int64_t positions = 0;
  int64_t sequences = 0;
};

/// Greedy-argmax accuracy over masked positions (or the class label).
/// Side-effect free on the parameters.
template <typename T>
Accuracy evaluate_accuracy(const ModelConfig& config, const ParameterStore<T>& store,
                           const MixingSet<T>* mixing, const std::vector<tasks::Sample>& samples,
                           int eval_batch = 256);

/// Mean natural-log cross-entropy over masked positions.
template <typename T>
double evaluate_perplexity(const ModelConfig& config, const ParameterStore<T>& store,
                           const MixingSet<T>* mixing, const std::vector<tasks::Sample>& samples,
                           int eval_batch = 256);

/// total_bits * accuracy / trainable_params
double bits_per_parameter(double accuracy, int64_t total_bits, int64_t trainable_params);

// --- grid search ---

struct GridPoint {
  double lr = 0.0;
  int batch_size = 0;
  int layers = 0;
  int width = 0;
  int heads = 0;
};

struct GridResult {
  GridPoint point;
  double metric = 0.0;  // validation metric (higher is better)
  double loss = 0.0;
};

struct GridSpec {
  std::vector<double> lrs;
  std::vector<int> batch_sizes;
  std::vector<int> layers;
  std::vector<int> widths;
  std::vector<int> heads;
};

/// Trains every cartesian point for a fixed reduced budget and ranks by the
/// validation metric (accuracy, or -log-perplexity for pure LM tasks).
/// Deterministic ordering: lexicographic in declared field order; ties keep
/// the earlier point.
std::vector<GridResult> run_grid(const GridSpec& space, const ModelConfig& base_model,
                                 const OptimizerConfig& base_opt, const tasks::Dataset& data,
                                 uint64_t seed, int64_t budget_steps,
                                 const std::function<void(const GridResult&)>& on_result = {});

}  // namespace falb::train

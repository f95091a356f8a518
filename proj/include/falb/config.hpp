#pragma once

#include <filesystem>
#include <string>

#include "falb/model.hpp"
#include "falb/tasks.hpp"
#include "falb/training.hpp"

namespace falb {

/// One experiment: task + model + optimizer + run controls.
struct RunConfig {
  tasks::TaskSpec task;
  ModelConfig model;
  train::OptimizerConfig opt;
  uint64_t seed = 0;
  std::string out_dir = "run";
  int64_t eval_every = 250;
  int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  int64_t log_every = 50;
  int eval_batch = 256;
  // optional early stop on a test metric, e.g. "sequence_acc" >= threshold
  std::string early_stop_metric;
  double early_stop_threshold = 0.0;

  /// Re-derives the model fields owned by the task (vocab, max_seq, classes).
  void sync_model_to_task();
  void validate() const;
};

/// Parses a JSON config. A minimal config needs only {"task": ..., "variant":
/// ...}; every other field falls back to the per-task defaults below. Unknown
/// keys are rejected by name.
RunConfig parse_config_text(const std::string& json_text);
RunConfig parse_config(const std::filesystem::path& path);

/// Canonical JSON (sorted keys, round-trippable floats); parse(emit(c))
/// equals c.
std::string emit_config(const RunConfig& config);

/// Task-specific architecture/optimizer defaults (layers, width, heads,
/// learning rate, batch size, steps) used when a config omits them.
struct TaskDefaults {
  int layers, width, heads;
  double lr;
  int batch_size;
  int64_t steps;
};
TaskDefaults task_defaults(const std::string& task);

}  // namespace falb

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "falb/config.hpp"
#include "falb/checkpoint.hpp"

namespace falb {

struct RunResult {
  std::map<std::string, double> metrics;  // final "split/metric" -> value
  int64_t steps = 0;
  std::filesystem::path dir;
  bool early_stopped = false;
};

/// Full training pipeline: dataset, model, loop, metrics CSV ("step,split,
/// metric,value"), checkpoints, summary JSON. Every artifact lands in
/// config.out_dir. Deterministic: (config, seed) fixes the metrics bytes.
/// `resume` continues from a loaded checkpoint (same config) and appends to
/// the existing metrics file.
RunResult run_training(const RunConfig& config, CheckpointData* resume = nullptr,
                       std::ostream* log = nullptr);

/// Evaluates a checkpoint on a freshly generated (or ingested) dataset and
/// returns "split/metric" -> value without touching the parameters.
std::map<std::string, double> run_eval(const RunConfig& config, const ParameterStore<float>& store,
                                       std::ostream* log = nullptr);

/// Formats a metric value the way the CSV does (shortest round-trip-ish,
/// fixed "%.9g").
std::string format_metric(double v);

}  // namespace falb

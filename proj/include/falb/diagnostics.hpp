#pragma once

#include <filesystem>
#include <vector>

#include "falb/model.hpp"
#include "falb/tasks.hpp"

namespace falb::diag {

/// One attention (or mixing) map from a forward pass: entry (source,
/// destination), columns stochastic over the causal support. MixiT records
/// hold the centered mixing matrix and are input-independent.
struct AttentionRecord {
  int layer = 0;
  int head = 0;
  std::vector<int32_t> tokens;
  Tensor<double> map;
};

/// Runs one sequence through the model and returns a record per
/// (layer, head).
std::vector<AttentionRecord> capture_attention(const ModelConfig& config,
                                               const ParameterStore<float>& store,
                                               const MixingSet<float>* mixing,
                                               const std::vector<int32_t>& tokens);

/// Mean weight destinations t >= 2 place on source t-1. Errors when the
/// map has fewer than 2 positions.
double prev_token_score(const AttentionRecord& record);

/// Weight the final (query) position places on the position of the correct
/// value token of a retrieval-format sample. Errors if the query key never
/// occurs in the prefix.
double copy_score(const AttentionRecord& record, const tasks::Sample& sample);

/// Scores averaged over retrieval samples, one row per (layer, head).
struct HeadScores {
  int layer = 0;
  int head = 0;
  double prev_token = 0;
  double copy = 0;
};
std::vector<HeadScores> induction_scores(const ModelConfig& config,
                                         const ParameterStore<float>& store,
                                         const MixingSet<float>* mixing,
                                         const std::vector<tasks::Sample>& retrieval_samples,
                                         int max_samples = 256);

/// Eigenvalues (descending) of the token covariance (1/n) h^T h after block
/// `layer`; effective rank (sum^2 / sum of squares) reported on request.
std::vector<double> kernel_spectrum(const ModelConfig& config, const ParameterStore<float>& store,
                                    const MixingSet<float>* mixing,
                                    const std::vector<int32_t>& tokens, int layer,
                                    double* effective_rank = nullptr);

/// Writes map_l<layer>_h<head>.csv matrices plus an index.json.
void export_attention(const std::vector<AttentionRecord>& records,
                      const std::filesystem::path& dir);

}  // namespace falb::diag

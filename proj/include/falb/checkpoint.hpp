#pragma once

#include <filesystem>
#include <string>

#include "falb/model.hpp"
#include "falb/training.hpp"

namespace falb {

/// Binary checkpoint, format "FALB1" v1, little-endian:
///   magic[5] | u32 version | u64 manifest_len | manifest JSON (canonical)
///   u32 tensor_count | per tensor: name, frozen flag, shape, f32 values
///   u32 moment_count | per trainable tensor: name, f32 m values, f32 v values
///   u64 step | u64 fnv1a checksum of all preceding bytes
/// Round-trips tensors, the frozen set, optimizer moments and the step
/// bitwise. Loads refuse bad magic, version, truncation or corruption with
/// the failing byte offset.
struct CheckpointData {
  std::string manifest_json;
  ParameterStore<float> store;
  train::TrainState<float> state;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& manifest_json,
                     const ParameterStore<float>& store, const train::TrainState<float>& state);

CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace falb

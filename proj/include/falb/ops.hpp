#pragma once

#include "falb/tensor.hpp"

namespace falb {

/// Column-wise causal softmax of a square score matrix. Entry (source,
/// destination) with source > destination is masked to exactly 0; each
/// destination column sums to 1 over its allowed sources. Stabilized by
/// per-column max subtraction.
template <typename T>
Tensor<T> causal_softmax(const Tensor<T>& scores);

}  // namespace falb

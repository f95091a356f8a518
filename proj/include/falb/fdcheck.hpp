#pragma once

#include <functional>

#include "falb/autograd.hpp"
#include "falb/tensor.hpp"

namespace falb {

/// Graph builder for a tensor-to-scalar function: given a tape and the leaf
/// holding x, return the scalar output Var.
template <typename T>
using ScalarFn = std::function<Var(Tape<T>&, Var)>;

/// Central-difference gradient check. Computes the analytic gradient of f at
/// x via the tape, then compares coordinate-wise against
/// (f(x + h e_i) - f(x - h e_i)) / 2h and returns
/// max_i |analytic_i - central_i| / (|analytic_i| + |central_i| + 1e-12).
///
/// max_coords = 0 checks every coordinate, otherwise a deterministic random
/// subset of that size (seeded by coord_seed).
template <typename T>
double finite_difference_check(const ScalarFn<T>& f, const Tensor<T>& x, double h,
                               int64_t max_coords = 0, uint64_t coord_seed = 0);

}  // namespace falb

#pragma once

#include <vector>

#include "falb/tensor.hpp"

namespace falb {

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns eigenvalues sorted descending; if vectors is non-null it receives
/// the matching orthonormal eigenvectors as columns.
std::vector<double> symmetric_eigenvalues(const Tensor<double>& a, Tensor<double>* vectors = nullptr);

/// Symmetric PSD square root; eigenvalues below 0 are clipped to 0.
Tensor<double> psd_sqrt(const Tensor<double>& a);

/// (sum lambda)^2 / sum lambda^2 of the nonnegative spectrum.
double effective_rank(const std::vector<double>& eigenvalues);

}  // namespace falb

#include "falb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace falb {

template <typename T>
Tensor<T> causal_softmax(const Tensor<T>& scores) {
  if (scores.ndim() != 2 || scores.rows() != scores.cols())
    throw std::invalid_argument("causal_softmax: expected square matrix");
  int64_t m = scores.rows();
  Tensor<T> out({m, m});
  for (int64_t a = 0; a < m; ++a) {  // destination column
    T mx = scores(0, a);
    for (int64_t s = 1; s <= a; ++s) mx = std::max(mx, scores(s, a));
    T z = 0;
    for (int64_t s = 0; s <= a; ++s) {
      out(s, a) = std::exp(scores(s, a) - mx);
      z += out(s, a);
    }
    for (int64_t s = 0; s <= a; ++s) out(s, a) /= z;
  }
  return out;
}

template Tensor<float> causal_softmax<float>(const Tensor<float>&);
template Tensor<double> causal_softmax<double>(const Tensor<double>&);

}  // namespace falb

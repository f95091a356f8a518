#include "falb/tensor.hpp"

#include <cmath>
#include <sstream>

namespace falb {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

template <typename T>
int64_t Tensor<T>::checked_numel(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
    n *= e;
  }
  return n;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T& x : data_)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

template <typename T>
void Tensor<T>::require_finite(const char* what) const {
  if (!all_finite())
    throw std::runtime_error(std::string("non-finite value produced by ") + what + " with shape " +
                             shape_str(shape_));
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace falb

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace falb {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of floats. Activations follow the feature-major
/// convention: a sequence activation is (features x positions), so column j
/// is the vector at position j.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
      throw std::invalid_argument("tensor: data length does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = value;
    return t;
  }
  static Tensor identity(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) t(i, i) = T(1);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t extent(int64_t d) const { return shape_.at(d); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // 2-D accessors; rows() is the feature extent, cols() the position extent.
  int64_t rows() const { return shape_.size() == 2 ? shape_[0] : throw_not_2d(); }
  int64_t cols() const { return shape_.size() == 2 ? shape_[1] : throw_not_2d(); }

  T& operator()(int64_t i, int64_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(int64_t i, int64_t j) const { return data_[i * shape_[1] + j]; }
  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  /// Throws if any entry is NaN/Inf; `what` names the producing operation.
  void require_finite(const char* what) const;

  void fill(T value) {
    for (auto& x : data_) x = value;
  }

 private:
  static int64_t checked_numel(const Shape& shape);
  [[noreturn]] int64_t throw_not_2d() const { throw std::logic_error("tensor: expected 2-D, got " + shape_str(shape_)); }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace falb

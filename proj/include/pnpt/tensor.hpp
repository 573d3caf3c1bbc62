#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pnpt {

/// Dense row-major tensor of doubles. Shapes are small vectors of ints;
/// everything in this project is CPU double precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Convenience accessors for 2-D / 3-D tensors (slow paths, tests and setup).
  double& at2(int r, int c);
  double at2(int r, int c) const;
  double& at3(int a, int b, int c);
  double at3(int a, int b, int c) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void fill(double v);
  Tensor reshaped(std::vector<int> new_shape) const;

  static std::int64_t count(const std::vector<int>& shape);

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<int>& s);

/// Max absolute elementwise difference; tensors must have equal numel.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Exact equality of shape and every element bit pattern.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace pnpt

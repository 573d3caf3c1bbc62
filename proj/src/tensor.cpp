#include "pnpt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace pnpt {

std::int64_t Tensor::count(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (count(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data_[0] = v;
  return t;
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= ndim()) throw std::out_of_range("tensor dim index");
  return shape_[static_cast<std::size_t>(i)];
}

double& Tensor::at2(int r, int c) {
  return data_[static_cast<std::size_t>(r) * shape_[1] + c];
}
double Tensor::at2(int r, int c) const {
  return data_[static_cast<std::size_t>(r) * shape_[1] + c];
}
double& Tensor::at3(int a, int b, int c) {
  return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
}
double Tensor::at3(int a, int b, int c) const {
  return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (count(new_shape) != numel()) {
    throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) + ": element count differs");
  }
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ')';
  return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw std::invalid_argument("max_abs_diff: element counts differ");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.numel())) == 0;
}

}  // namespace pnpt

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sigcn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims);
std::string shape_str(const Shape& dims);

// Dense row-major tensor of doubles, rank 1-4, last dimension fastest.
// Scalars are represented as rank-1 tensors of length 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims);
  Tensor(Shape dims, std::vector<double> data);

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }
  static Tensor full(Shape dims, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  // 2-D convenience constructor: Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return data_.size() == 1; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * dims_[1] + i) * dims_[2] + j];
  }
  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * dims_[1] + i) * dims_[2] + j];
  }

  double item() const;

  // Same data, new dims; numel must agree.
  Tensor reshaped(Shape dims) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape dims_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

// Non-differentiable tensor algebra used outside the tape.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

}  // namespace sigcn

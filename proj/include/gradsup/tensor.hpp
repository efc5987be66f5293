#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradsup {

// Dense row-major tensor of doubles. Rank 0 is a scalar, rank 1 a vector,
// rank 2 a matrix. Everything in this library is double precision; the GS
// loss divides by gradient norms and single precision does not survive the
// finite-difference checks.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(t.count(t.shape_), 0.0);
    return t;
  }

  static Tensor vec(std::vector<double> values) {
    Tensor t;
    t.shape_ = {values.size()};
    t.data_ = std::move(values);
    return t;
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values) {
    if (values.size() != rows * cols)
      throw std::invalid_argument("Tensor::matrix: data size " +
                                  std::to_string(values.size()) +
                                  " != " + std::to_string(rows * cols));
    Tensor t;
    t.shape_ = {rows, cols};
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return shape_.empty(); }

  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  // Scalar extraction; only valid for single-element tensors.
  double item() const {
    if (data_.size() != 1)
      throw std::invalid_argument("Tensor::item on non-scalar of size " +
                                  std::to_string(data_.size()));
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::size_t dim(std::size_t i) const {
    if (i >= shape_.size())
      throw std::invalid_argument("Tensor: rank " +
                                  std::to_string(shape_.size()) +
                                  " has no dimension " + std::to_string(i));
    return shape_[i];
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace gradsup

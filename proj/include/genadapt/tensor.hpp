#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace genadapt::numerics {

// Dense row-major double tensor. Treated as an immutable value once built;
// code that needs a modified tensor constructs a new one.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor filled(std::vector<std::size_t> shape, double v);
  static Tensor from_fn(std::vector<std::size_t> shape,
                        const std::function<double(std::size_t)>& fn);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rank() const { return shape_.size(); }
  bool empty() const { return values_.empty(); }

  // 2-D accessors (rank-1 tensors behave as a single row)
  std::size_t rows() const { return rank() <= 1 ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double scalar_value() const;

  const std::vector<double>& values() const { return values_; }
  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool flag) {
    requires_grad_ = flag;
    return *this;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool bit_equal(const Tensor& other) const;

  // throws NumericError naming `what` if any value is NaN or infinite
  void check_finite(const std::string& what) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace genadapt::numerics

#include "genadapt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "genadapt/errors.hpp"

namespace genadapt::numerics {

namespace {
std::size_t checked_volume(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor: zero extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), values_(checked_volume(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (checked_volume(shape_) != values_.size())
    throw DimensionError("tensor: shape " + shape_str(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::filled(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.values_) x = v;
  return t;
}

Tensor Tensor::from_fn(std::vector<std::size_t> shape,
                       const std::function<double(std::size_t)>& fn) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.values_.size(); ++i) t.values_[i] = fn(i);
  return t;
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ContractError("tensor: scalar_value on non-scalar " + shape_str(shape_));
  return values_[0];
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(values_.data(), other.values_.data(),
                     values_.size() * sizeof(double)) == 0;
}

void Tensor::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]))
      throw NumericError("non-finite value in " + what + " at flat index " +
                         std::to_string(i));
  }
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace genadapt::numerics

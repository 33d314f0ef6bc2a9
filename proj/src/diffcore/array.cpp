#include "mac/diffcore/array.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "mac/errors.hpp"

namespace mac::diff {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Array::Array(Shape shape, Precision precision)
    : shape_(std::move(shape)), values_(shape_size(shape_), 0.0), precision_(precision) {}

Array::Array(Shape shape, std::vector<double> values, Precision precision)
    : shape_(std::move(shape)), values_(std::move(values)), precision_(precision) {
  if (values_.size() != shape_size(shape_)) {
    throw DimensionError("array of shape " + shape_string(shape_) + " given " +
                         std::to_string(values_.size()) + " values");
  }
  round_to_precision();
}

Array Array::scalar(double value, Precision precision) {
  return Array(Shape{}, std::vector<double>{value}, precision);
}

std::size_t Array::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

double Array::at(std::size_t row, std::size_t col) const { return values_[row * row_width() + col]; }
double& Array::at(std::size_t row, std::size_t col) { return values_[row * row_width() + col]; }

double Array::item() const {
  if (values_.size() != 1) {
    throw DimensionError("item() on array of shape " + shape_string(shape_));
  }
  return values_[0];
}

std::size_t Array::rows() const { return shape_.empty() ? 1 : shape_[0]; }

std::size_t Array::row_width() const {
  if (shape_.empty() || shape_[0] == 0) return 1;
  return values_.size() / shape_[0];
}

void Array::round_to_precision() {
  if (precision_ != Precision::f32) return;
  for (double& v : values_) v = static_cast<double>(static_cast<float>(v));
}

bool Array::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Array out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Array Array::with_precision(Precision precision) const {
  Array out = *this;
  out.precision_ = precision;
  out.round_to_precision();
  return out;
}

void Array::set_precision(Precision precision) {
  precision_ = precision;
  round_to_precision();
}

void Array::fill(double value) {
  for (double& v : values_) v = value;
  round_to_precision();
}

}  // namespace mac::diff

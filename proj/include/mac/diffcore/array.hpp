#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mac::diff {

// Storage precision. Values are held as double either way; in f32 mode every
// produced value is rounded to the nearest float, so the array behaves as
// 32-bit storage. f64 is reserved for oracles and gradient checks.
enum class Precision : std::uint8_t { f32, f64 };

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major real array.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, Precision precision = Precision::f32);
  Array(Shape shape, std::vector<double> values, Precision precision = Precision::f32);

  static Array scalar(double value, Precision precision = Precision::f32);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  Precision precision() const noexcept { return precision_; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  // Row-major 2-D access on the last two axes of a rank-2 array.
  double at(std::size_t row, std::size_t col) const;
  double& at(std::size_t row, std::size_t col);
  // Scalar value of a size-1 array.
  double item() const;

  // Rows of a rank>=1 array viewed as (dim(0), size / dim(0)).
  std::size_t rows() const;
  std::size_t row_width() const;

  void round_to_precision();
  bool all_finite() const;

  // Same values under a new shape with equal element count.
  Array reshaped(Shape shape) const;
  Array with_precision(Precision precision) const;
  // In place: switches precision and rounds.
  void set_precision(Precision precision);
  void fill(double value);

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  Precision precision_ = Precision::f32;
};

}  // namespace mac::diff

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pmdef {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of doubles. Image batches use (N, H, W, C).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::vector<double>& storage() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  // Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;

  // Leading-dimension helpers for batch-first data.
  std::size_t batch() const;
  std::size_t row_size() const;
  Tensor rows(std::size_t begin, std::size_t end) const;
  Tensor gather_rows(std::span<const std::size_t> indices) const;
  std::span<const double> row(std::size_t i) const;
  std::span<double> row(std::size_t i);

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Concatenates along the batch dimension; all inputs must share row shape.
Tensor concat_rows(std::span<const Tensor> parts);

std::vector<int> argmax_rows(const Tensor& t);

}  // namespace pmdef

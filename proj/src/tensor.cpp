#include "pmdef/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pmdef/error.hpp"

namespace pmdef {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape_));
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape_));
  if (shape_size(shape_) != values_.size())
    throw DimensionError("shape " + to_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                         " values, got " + std::to_string(values_.size()));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  if (values_.size() != 1) throw DimensionError("item() on non-scalar tensor " + to_string(shape_));
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size())
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), values_);
}

std::size_t Tensor::batch() const { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::row_size() const { return shape_.empty() ? 0 : values_.size() / shape_[0]; }

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > batch())
    throw DimensionError("row range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         to_string(shape_));
  Shape s = shape_;
  s[0] = end - begin;
  const auto stride = row_size();
  return Tensor(std::move(s), std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                  values_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DimensionError("gather_rows with no indices");
  Shape s = shape_;
  s[0] = indices.size();
  const auto stride = row_size();
  std::vector<double> out;
  out.reserve(indices.size() * stride);
  for (auto i : indices) {
    if (i >= batch()) throw DimensionError("row index " + std::to_string(i) + " out of range");
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor(std::move(s), std::move(out));
}

std::span<const double> Tensor::row(std::size_t i) const {
  const auto stride = row_size();
  return std::span<const double>(values_).subspan(i * stride, stride);
}

std::span<double> Tensor::row(std::size_t i) {
  const auto stride = row_size();
  return std::span<double>(values_).subspan(i * stride, stride);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Shape row_shape(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != row_shape)
      throw DimensionError("concat_rows: " + to_string(p.shape()) + " does not match " + to_string(parts[0].shape()));
    total += p.batch();
  }
  std::vector<double> out;
  out.reserve(total * parts[0].row_size());
  for (const auto& p : parts) out.insert(out.end(), p.storage().begin(), p.storage().end());
  Shape s = parts[0].shape();
  s[0] = total;
  return Tensor(std::move(s), std::move(out));
}

std::vector<int> argmax_rows(const Tensor& t) {
  std::vector<int> out(t.batch());
  for (std::size_t i = 0; i < t.batch(); ++i) {
    auto r = t.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

}  // namespace pmdef

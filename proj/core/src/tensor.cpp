#include "gnas/tensor.hpp"

#include <algorithm>

namespace gnas {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(*this));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other)) {
    throw ShapeError("add_: " + shape_string(*this) + " vs " + shape_string(other));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

std::string shape_string(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

}  // namespace gnas

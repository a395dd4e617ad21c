#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "gnas/errors.hpp"

namespace gnas {

// Dense row-major 2-D array of doubles. Vectors are 1xN or Nx1, scalars 1x1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
  Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> data)
      : Tensor(rows, cols, std::vector<double>(data)) {}

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  double item() const;

  void fill(double v);
  // this += other (same shape).
  void add_(const Tensor& other);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Tensor& t);

// Trainable leaf. Gradients are accumulated into `grad` by Tape::backward.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
  std::size_t size() const { return value.size(); }
};

}  // namespace gnas

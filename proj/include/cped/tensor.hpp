#pragma once

// Row-major 2-D tensor of doubles. Vectors are 1 x n or n x 1.

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cped {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
  // Nested rows, e.g. Tensor({{1, 2}, {3, 4}}).
  Tensor(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor row(std::span<const double> values);
  static Tensor column(std::span<const double> values);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  // Value of a 1 x 1 tensor.
  double item() const;

  std::span<double> data() & { return data_; }
  std::span<const double> data() const& { return data_; }
  // A span into a temporary would dangle, e.g. in a range-for.
  std::span<const double> data() const&& = delete;
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  const std::vector<double>& vector() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  Tensor transposed() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws NumericError naming `what` if t holds NaN or Inf.
void require_finite(const Tensor& t, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace cped

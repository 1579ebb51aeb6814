#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tempo::num {

// Dense row-major matrix of doubles.
class Array2 {
 public:
  Array2() = default;
  Array2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Array2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Array2 identity(std::size_t n);
  static Array2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Array2 column(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Array2& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  void fill(double value);
  bool all_finite() const;
  std::string shape_string() const;

  Array2& operator+=(const Array2& other);
  Array2& operator*=(double s);

  friend bool operator==(const Array2&, const Array2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Plain (non-recorded) kernels shared by the tape ops.
Array2 matmul(const Array2& a, const Array2& b);
// a * b^T
Array2 matmul_nt(const Array2& a, const Array2& b);
// a^T * b
Array2 matmul_tn(const Array2& a, const Array2& b);
Array2 transpose(const Array2& a);
Array2 softmax_rows(const Array2& a);
double max_abs_diff(const Array2& a, const Array2& b);

}  // namespace tempo::num

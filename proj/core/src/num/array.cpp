#include "tempo/num/array.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tempo/error.hpp"

namespace tempo::num {

Array2::Array2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Array2::Array2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ContractError("Array2: data length " + std::to_string(data_.size()) + " does not match " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Array2 Array2::identity(std::size_t n) {
  Array2 out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

Array2 Array2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ContractError("Array2::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Array2(r, c, std::move(data));
}

Array2 Array2::column(std::span<const double> values) {
  return Array2(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

void Array2::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Array2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Array2::shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

Array2& Array2::operator+=(const Array2& other) {
  if (!same_shape(other)) throw ContractError("Array2 +=: shape " + shape_string() + " vs " + other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Array2& Array2::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Array2 matmul(const Array2& a, const Array2& b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: " + a.shape_string() + " * " + b.shape_string());
  Array2 out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Array2 matmul_nt(const Array2& a, const Array2& b) {
  if (a.cols() != b.cols()) throw ContractError("matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
  Array2 out(a.rows(), b.rows());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return out;
}

Array2 matmul_tn(const Array2& a, const Array2& b) {
  if (a.rows() != b.rows()) throw ContractError("matmul_tn: " + a.shape_string() + "^T * " + b.shape_string());
  Array2 out(a.cols(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* arow = pa + r * k;
    const double* brow = pb + r * m;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Array2 transpose(const Array2& a) {
  Array2 out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Array2 softmax_rows(const Array2& a) {
  Array2 out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto in = a.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (auto& v : o) v /= sum;
  }
  return out;
}

double max_abs_diff(const Array2& a, const Array2& b) {
  if (!a.same_shape(b)) throw ContractError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace tempo::num

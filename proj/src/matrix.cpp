#include "aufa/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "aufa/error.hpp"

namespace aufa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "missing-file";
    case ErrorKind::RaggedRows: return "ragged-rows";
    case ErrorKind::NonNumeric: return "non-numeric";
    case ErrorKind::TooFewTimePoints: return "too-few-time-points";
    case ErrorKind::DegenerateSignal: return "degenerate-signal";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::DuplicateSubject: return "duplicate-subject";
    case ErrorKind::MissingLabel: return "missing-label";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::Format: return "format";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorKind::DimensionMismatch,
                "matrix data has " + std::to_string(data_.size()) + " values, expected " +
                    std::to_string(rows * cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorKind::RaggedRows, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::DimensionMismatch,
                "shape " + a.shape_string() + " vs " + b.shape_string());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace aufa

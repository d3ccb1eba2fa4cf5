// SPDX-License-Identifier: Apache-2.0
//
// Dense containers, the LGT1 tensor file format, and the deterministic numeric
// primitives the loss and oracle code is built on.
//
// All arithmetic is float64. A float32 tensor keeps its values in double
// storage; every value is exactly representable in float, so writing it back
// reproduces the file bit for bit.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <vector>

namespace gld {

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

const char* dtype_name(DType dtype);

/// Row-major tensor of rank 0..4 (rank 1..4 on disk).
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  Tensor(std::vector<std::uint64_t> shape, DType dtype);
  /// Takes ownership of `data`; float32 values are rounded to float.
  Tensor(std::vector<std::uint64_t> shape, DType dtype, std::vector<double> data);

  const std::vector<std::uint64_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  DType dtype() const { return dtype_; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::uint64_t> shape_;
  DType dtype_ = DType::Float64;
  std::vector<double> data_;
};

/// Rank-3 [batch x sequence x vocab] logits.
class LogitTensor {
 public:
  LogitTensor() = default;
  LogitTensor(std::size_t batch, std::size_t length, std::size_t vocab,
              DType dtype = DType::Float64);
  LogitTensor(std::size_t batch, std::size_t length, std::size_t vocab, DType dtype,
              std::vector<double> data);

  /// Requires rank 3 and finite data (ShapeError / ValidationError otherwise).
  static LogitTensor from_tensor(const Tensor& tensor);
  Tensor to_tensor() const;

  std::size_t batch() const { return batch_; }
  std::size_t length() const { return length_; }
  std::size_t vocab() const { return vocab_; }
  DType dtype() const { return dtype_; }
  std::size_t size() const { return data_.size(); }

  double operator()(std::size_t b, std::size_t t, std::size_t i) const {
    return data_[(b * length_ + t) * vocab_ + i];
  }
  double& operator()(std::size_t b, std::size_t t, std::size_t i) {
    return data_[(b * length_ + t) * vocab_ + i];
  }

  std::span<const double> row(std::size_t b, std::size_t t) const {
    return std::span<const double>(data_).subspan((b * length_ + t) * vocab_, vocab_);
  }
  std::span<double> row(std::size_t b, std::size_t t) {
    return std::span<double>(data_).subspan((b * length_ + t) * vocab_, vocab_);
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool operator==(const LogitTensor&) const = default;

 private:
  std::size_t batch_ = 0;
  std::size_t length_ = 0;
  std::size_t vocab_ = 0;
  DType dtype_ = DType::Float64;
  std::vector<double> data_;
};

/// Dense row-major float64 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  /// Nested initializer rows; every row must have the same length.
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }
  std::span<double> row(std::size_t i) {
    return std::span<double>(data_).subspan(i * cols_, cols_);
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  Matrix transposed() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);

// ---------------------------------------------------------------------------
// LGT1 file IO

/// Reads an LGT1 file. FormatError on bad header or payload size, IoError when
/// the file cannot be opened, ValidationError on a non-finite entry.
Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& tensor, const std::filesystem::path& path);

/// Serialized LGT1 bytes of `tensor`.
std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Selection and sorting

struct TopK {
  std::vector<std::size_t> indices;  // descending by value, ties by index
  std::vector<double> values;
};

/// The min(k, row.size()) largest entries of `row`. ParameterError when k = 0.
TopK topk_per_position(std::span<const double> row, std::size_t k);

struct SortResult {
  std::vector<double> sorted;      // descending
  std::vector<std::size_t> perm;   // sorted[i] == input[perm[i]]
};

/// Stable descending sort. ValidationError on NaN.
SortResult sort_descending(std::span<const double> values);

/// Smallest difference between consecutive entries of a descending sequence;
/// +inf for fewer than two entries.
double min_sorted_gap(std::span<const double> sorted);

// ---------------------------------------------------------------------------
// Reductions and dense kernels

/// Streaming form of exact_sum.
class ExactSum {
 public:
  void add(double x);
  double value() const;

 private:
  std::vector<double> partials_;  // non-overlapping, increasing magnitude
};

/// Correctly rounded sum of `values` (Shewchuk's exact partials). The result
/// does not depend on the order of the terms.
double exact_sum(std::span<const double> values);

/// C = Z^T Z for Z with rows = sequence positions. Each entry is a strictly
/// left-to-right sum over rows, computed once per unordered pair and mirrored.
Matrix gram_matrix(const Matrix& z);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

struct SpectralNorm {
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Largest singular value by power iteration on M^T M. Converged when two
/// successive estimates differ by less than `tol` relatively.
SpectralNorm spectral_norm(const Matrix& m, std::size_t max_iters = 1000, double tol = 1e-12);

double frobenius_norm(const Matrix& m);
double l2_norm(std::span<const double> v);

}  // namespace gld

// SPDX-License-Identifier: Apache-2.0
#include "gld/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <string>

#include "gld/errors.hpp"
#include "gld/random.hpp"

namespace gld {

namespace {

constexpr std::size_t kHeaderBytes = 8;
constexpr std::array<char, 4> kMagic = {'L', 'G', 'T', '1'};

std::size_t checked_product(std::span<const std::uint64_t> dims) {
  std::uint64_t total = 1;
  for (std::uint64_t d : dims) {
    if (d != 0 && total > std::numeric_limits<std::uint64_t>::max() / d) {
      throw FormatError("tensor dimensions overflow");
    }
    total *= d;
  }
  return static_cast<std::size_t>(total);
}

void check_finite(std::span<const double> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw ValidationError("non-finite tensor entry at flat index " + std::to_string(i));
    }
  }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(in[b]) << (8 * b);
  return v;
}

}  // namespace

const char* dtype_name(DType dtype) {
  return dtype == DType::Float32 ? "float32" : "float64";
}

Tensor::Tensor(std::vector<std::uint64_t> shape, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype) {
  data_.assign(checked_product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::uint64_t> shape, DType dtype, std::vector<double> data)
    : shape_(std::move(shape)), dtype_(dtype), data_(std::move(data)) {
  if (data_.size() != checked_product(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match its shape");
  }
  if (dtype_ == DType::Float32) {
    for (double& x : data_) x = static_cast<double>(static_cast<float>(x));
  }
}

LogitTensor::LogitTensor(std::size_t batch, std::size_t length, std::size_t vocab, DType dtype)
    : batch_(batch), length_(length), vocab_(vocab), dtype_(dtype),
      data_(batch * length * vocab, 0.0) {}

LogitTensor::LogitTensor(std::size_t batch, std::size_t length, std::size_t vocab, DType dtype,
                         std::vector<double> data)
    : batch_(batch), length_(length), vocab_(vocab), dtype_(dtype), data_(std::move(data)) {
  if (data_.size() != batch * length * vocab) {
    throw ShapeError("logit data length " + std::to_string(data_.size()) + " != B*L*d = " +
                     std::to_string(batch * length * vocab));
  }
  if (dtype_ == DType::Float32) {
    for (double& x : data_) x = static_cast<double>(static_cast<float>(x));
  }
}

LogitTensor LogitTensor::from_tensor(const Tensor& tensor) {
  if (tensor.rank() != 3) {
    throw ShapeError("logit tensor must have rank 3, got rank " + std::to_string(tensor.rank()));
  }
  check_finite(tensor.data());
  const auto& s = tensor.shape();
  return LogitTensor(s[0], s[1], s[2], tensor.dtype(),
                     std::vector<double>(tensor.data().begin(), tensor.data().end()));
}

Tensor LogitTensor::to_tensor() const {
  return Tensor({batch_, length_, vocab_}, dtype_, data_);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw ShapeError("matrix data length mismatch");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("matrix sum shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("matrix difference shape mismatch");
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.rank() < 1 || tensor.rank() > 4) {
    throw ShapeError("LGT1 supports rank 1..4, got " + std::to_string(tensor.rank()));
  }
  const std::size_t width = tensor.dtype() == DType::Float32 ? 4 : 8;
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 8 * tensor.rank() + width * tensor.size());
  for (char ch : kMagic) out.push_back(static_cast<std::uint8_t>(ch));
  out.push_back(static_cast<std::uint8_t>(tensor.dtype()));
  out.push_back(static_cast<std::uint8_t>(tensor.rank()));
  out.push_back(0);
  out.push_back(0);
  for (std::uint64_t d : tensor.shape()) put_u64(out, d);
  for (double x : tensor.data()) {
    if (width == 4) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(x));
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("file shorter than the LGT1 header");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw FormatError("bad magic");
  const std::uint8_t code = bytes[4];
  if (code != 1 && code != 2) throw FormatError("unknown dtype code " + std::to_string(code));
  const std::size_t ndim = bytes[5];
  if (ndim < 1 || ndim > 4) throw FormatError("ndim must be 1..4, got " + std::to_string(ndim));
  if (bytes[6] != 0 || bytes[7] != 0) throw FormatError("reserved header bytes are not zero");
  if (bytes.size() < kHeaderBytes + 8 * ndim) throw FormatError("truncated dimension table");

  std::vector<std::uint64_t> shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) shape[i] = get_u64(bytes.subspan(kHeaderBytes + 8 * i));
  const std::size_t count = checked_product(shape);
  const std::size_t width = code == 1 ? 4 : 8;
  const std::size_t offset = kHeaderBytes + 8 * ndim;
  const std::size_t payload = bytes.size() - offset;
  if (count > std::numeric_limits<std::size_t>::max() / width || payload != count * width) {
    throw FormatError("payload holds " + std::to_string(payload) + " bytes, shape needs " +
                      std::to_string(count) + " x " + std::to_string(width));
  }

  std::vector<double> data(count);
  auto p = bytes.subspan(offset);
  for (std::size_t i = 0; i < count; ++i) {
    if (width == 4) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
      data[i] = static_cast<double>(std::bit_cast<float>(bits));
    } else {
      data[i] = std::bit_cast<double>(get_u64(p.subspan(8 * i)));
    }
  }
  check_finite(data);
  return Tensor(std::move(shape), static_cast<DType>(code), std::move(data));
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return decode_tensor(bytes);
}

void write_tensor(const Tensor& tensor, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

TopK topk_per_position(std::span<const double> row, std::size_t k) {
  if (k == 0) throw ParameterError("top-k requires k >= 1");
  const std::size_t keep = std::min(k, row.size());
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return row[a] > row[b] || (row[a] == row[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    before);
  TopK out;
  out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  out.values.reserve(keep);
  for (std::size_t i : out.indices) out.values.push_back(row[i]);
  return out;
}

SortResult sort_descending(std::span<const double> values) {
  // (value, index) pairs under a total order give the stable result
  std::vector<std::pair<double, std::size_t>> keyed(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) throw ValidationError("cannot sort NaN");
    keyed[i] = {values[i], i};
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  SortResult out;
  out.sorted.resize(values.size());
  out.perm.resize(values.size());
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    out.sorted[i] = keyed[i].first;
    out.perm[i] = keyed[i].second;
  }
  return out;
}

double min_sorted_gap(std::span<const double> sorted) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < sorted.size(); ++i) gap = std::min(gap, sorted[i - 1] - sorted[i]);
  return gap;
}

// ---------------------------------------------------------------------------

void ExactSum::add(double x) {
  std::size_t used = 0;
  for (double y : partials_) {
    if (std::abs(x) < std::abs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials_[used++] = lo;
    x = hi;
  }
  partials_.resize(used);
  partials_.push_back(x);
}

double ExactSum::value() const {
  // Round the exact expansion to nearest, breaking the half-way case the way
  // a single correctly rounded addition would.
  std::size_t n = partials_.size();
  if (n == 0) return 0.0;
  double hi = partials_[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials_[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

double exact_sum(std::span<const double> values) {
  ExactSum acc;
  for (double x : values) acc.add(x);
  return acc.value();
}

Matrix gram_matrix(const Matrix& z) {
  if (z.rows() == 0) throw ShapeError("gram_matrix needs at least one row");
  const std::size_t n = z.cols();
  Matrix c(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < z.rows(); ++t) acc += z(t, i) * z(t, j);
      c(i, j) = acc;
      c(j, i) = acc;
    }
  }
  return c;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ParameterError("softmax of an empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw ParameterError("log_softmax of an empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double x : logits) total += std::exp(x - top);
  const double log_norm = top + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
  return out;
}

SpectralNorm spectral_norm(const Matrix& m, std::size_t max_iters, double tol) {
  SpectralNorm result;
  if (m.rows() == 0 || m.cols() == 0) {
    result.converged = true;
    return result;
  }
  // Fixed pseudo-random start: deterministic, and not orthogonal to the top
  // singular direction for any structured input we care about.
  Rng rng(0x5eed5eedULL);
  std::vector<double> v(m.cols());
  for (double& x : v) x = 1.0 + rng.uniform();
  double norm = l2_norm(v);
  for (double& x : v) x /= norm;

  std::vector<double> w(m.rows());
  double previous = -1.0;
  for (std::size_t iter = 1; iter <= max_iters; ++iter) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j) * v[j];
      w[i] = acc;
    }
    const double estimate = l2_norm(w);
    result.value = std::max(result.value, estimate);
    result.iterations = iter;
    if (estimate == 0.0) {
      result.converged = true;
      return result;
    }
    if (previous >= 0.0 && std::abs(estimate - previous) < tol * estimate) {
      result.converged = true;
      return result;
    }
    previous = estimate;
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) v[j] += m(i, j) * w[i];
    norm = l2_norm(v);
    if (norm == 0.0) {
      result.converged = true;
      return result;
    }
    for (double& x : v) x /= norm;
  }
  return result;
}

double frobenius_norm(const Matrix& m) { return l2_norm(m.data()); }

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace gld

// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "gld/errors.hpp"
#include "gld/random.hpp"
#include "gld/tensor.hpp"

using namespace gld;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "gld_test_tensor";
  fs::create_directories(dir);
  return dir / name;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Hand-assembled LGT1 file, independent of encode_tensor.
std::vector<std::uint8_t> raw_header(const char* magic, std::uint8_t dtype,
                                     std::vector<std::uint64_t> dims) {
  std::vector<std::uint8_t> out(magic, magic + 4);
  out.push_back(dtype);
  out.push_back(static_cast<std::uint8_t>(dims.size()));
  out.push_back(0);
  out.push_back(0);
  for (auto d : dims) put_u64(out, d);
  return out;
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

void dump(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("lgt1 read of a hand-built f32 file") {
  auto bytes = raw_header("LGT1", 1, {1, 2, 3});
  for (int i = 0; i < 6; ++i) put_f32(bytes, 0.5f * static_cast<float>(i) - 1.0f);
  const auto p = scratch("hand.lgt");
  dump(p, bytes);
  const Tensor t = read_tensor(p);
  CHECK(t.shape() == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(t.dtype() == DType::Float32);
  const LogitTensor z = LogitTensor::from_tensor(t);
  CHECK(z(0, 1, 2) == 1.5);
  CHECK(z(0, 0, 0) == -1.0);
  CHECK(encode_tensor(t) == bytes);
}

TEST_CASE("lgt1 rejects bad magic, truncation, trailing bytes and non-finite data") {
  auto bad = raw_header("XXXX", 1, {1});
  put_f32(bad, 1.0f);
  CHECK_THROWS_AS(decode_tensor(bad), FormatError);

  auto trunc = raw_header("LGT1", 1, {2, 2, 2});
  for (int i = 0; i < 7; ++i) put_f32(trunc, 1.0f);
  CHECK_THROWS_AS(decode_tensor(trunc), FormatError);
  const auto p = scratch("trunc.lgt");
  dump(p, trunc);
  CHECK_THROWS_AS(read_tensor(p), FormatError);

  auto extra = raw_header("LGT1", 1, {1});
  put_f32(extra, 1.0f);
  put_f32(extra, 1.0f);
  CHECK_THROWS_AS(decode_tensor(extra), FormatError);

  auto rank0 = raw_header("LGT1", 1, {});
  CHECK_THROWS_AS(decode_tensor(rank0), FormatError);
  auto rank5 = raw_header("LGT1", 1, {1, 1, 1, 1, 1});
  put_f32(rank5, 1.0f);
  CHECK_THROWS_AS(decode_tensor(rank5), FormatError);
  auto dt = raw_header("LGT1", 3, {1});
  put_f32(dt, 1.0f);
  CHECK_THROWS_AS(decode_tensor(dt), FormatError);
  auto reserved = raw_header("LGT1", 1, {1});
  reserved[6] = 1;
  put_f32(reserved, 1.0f);
  CHECK_THROWS_AS(decode_tensor(reserved), FormatError);

  auto nan = raw_header("LGT1", 1, {2});
  put_f32(nan, 1.0f);
  put_f32(nan, std::nanf(""));
  CHECK_THROWS_AS(decode_tensor(nan), ValidationError);
  auto inf = raw_header("LGT1", 1, {1});
  put_f32(inf, INFINITY);
  CHECK_THROWS_AS(decode_tensor(inf), ValidationError);

  CHECK_THROWS_AS(read_tensor(scratch("does_not_exist.lgt")), IoError);
}

TEST_CASE("lgt1 encodes 1.5 as 00 00 C0 3F") {
  const Tensor t({1}, DType::Float32, {1.5});
  const auto bytes = encode_tensor(t);
  REQUIRE(bytes.size() == 8 + 8 + 4);
  CHECK(bytes[16] == 0x00);
  CHECK(bytes[17] == 0x00);
  CHECK(bytes[18] == 0xC0);
  CHECK(bytes[19] == 0x3F);

  const Tensor t3({1, 1, 2}, DType::Float32, {0.0, 1.5});
  const auto b3 = encode_tensor(t3);
  CHECK(std::equal(b3.begin() + 36, b3.end(), std::vector<std::uint8_t>{0, 0, 0xC0, 0x3F}.begin()));
}

TEST_CASE("lgt1 empty batch writes a header and no payload") {
  const Tensor t({0, 4, 5}, DType::Float64);
  const auto bytes = encode_tensor(t);
  CHECK(bytes.size() == 8 + 3 * 8);
  const auto p = scratch("empty.lgt");
  write_tensor(t, p);
  CHECK(fs::file_size(p) == bytes.size());
  CHECK(read_tensor(p) == t);
}

TEST_CASE("lgt1 round trip is bit exact for both dtypes") {
  Rng rng(11);
  for (DType dt : {DType::Float32, DType::Float64}) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t rank = rng.between(1, 4);
      std::vector<std::uint64_t> shape;
      std::size_t n = 1;
      for (std::size_t r = 0; r < rank; ++r) {
        shape.push_back(rng.between(1, 5));
        n *= shape.back();
      }
      std::vector<double> data(n);
      for (auto& x : data) x = rng.normal() * 1e3;
      const Tensor t(shape, dt, data);
      const auto p = scratch("rt.lgt");
      write_tensor(t, p);
      const Tensor back = read_tensor(p);
      CHECK(back == t);
      CHECK(encode_tensor(back) == encode_tensor(t));
    }
  }
  CHECK_THROWS_AS(write_tensor(Tensor({1}, DType::Float64), "/nonexistent_dir/x.lgt"), IoError);
}

TEST_CASE("topk selection") {
  auto a = topk_per_position(std::vector<double>{0.1, 5, 3}, 2);
  CHECK(a.indices == std::vector<std::size_t>{1, 2});
  CHECK(a.values == std::vector<double>{5, 3});
  auto b = topk_per_position(std::vector<double>{7, 7, 7}, 2);
  CHECK(b.indices == std::vector<std::size_t>{0, 1});
  auto c = topk_per_position(std::vector<double>{4}, 3);
  CHECK(c.indices == std::vector<std::size_t>{0});
  CHECK(c.values == std::vector<double>{4});
  CHECK_THROWS_AS(topk_per_position(std::vector<double>{1, 2}, 0), ParameterError);
}

TEST_CASE("stable descending sort") {
  auto a = sort_descending(std::vector<double>{1, 3, 2});
  CHECK(a.sorted == std::vector<double>{3, 2, 1});
  CHECK(a.perm == std::vector<std::size_t>{1, 2, 0});
  auto b = sort_descending(std::vector<double>{5, 5});
  CHECK(b.perm == std::vector<std::size_t>{0, 1});
  auto c = sort_descending(std::vector<double>{});
  CHECK(c.sorted.empty());
  CHECK(c.perm.empty());
  CHECK_THROWS_AS(sort_descending(std::vector<double>{1, NAN}), ValidationError);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(rng.between(1, 40));
    // coarse grid so ties are common
    for (auto& x : v) x = static_cast<double>(rng.index(6));
    const auto s = sort_descending(v);
    std::vector<std::size_t> seen = s.perm;
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> iota(v.size());
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(seen == iota);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(s.sorted[i] == v[s.perm[i]]);
    for (std::size_t i = 1; i < v.size(); ++i) {
      CHECK(s.sorted[i - 1] >= s.sorted[i]);
      if (s.sorted[i - 1] == s.sorted[i]) CHECK(s.perm[i - 1] < s.perm[i]);
    }
  }
  CHECK(min_sorted_gap(std::vector<double>{4, 2, 1}) == 1.0);
  CHECK(std::isinf(min_sorted_gap(std::vector<double>{4})));
}

TEST_CASE("gram matrix") {
  CHECK(gram_matrix(Matrix{{1, 0}, {0, 1}}) == Matrix::identity(2));
  CHECK(gram_matrix(Matrix{{1, 2}}) == Matrix{{1, 2}, {2, 4}});
  CHECK(gram_matrix(Matrix{{0, 5, 3}, {4, 0, 3}}) == Matrix{{16, 0, 12}, {0, 25, 15}, {12, 15, 18}});
  CHECK_THROWS_AS(gram_matrix(Matrix(0, 3)), ShapeError);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t l = rng.between(1, 6), n = rng.between(1, 8);
    Matrix z(l, n);
    for (auto& x : z.data()) x = rng.normal();
    const Matrix c = gram_matrix(z);
    CHECK(c == c.transposed());
    // left-to-right oracle for one entry
    const std::size_t i = rng.index(n), j = rng.index(n);
    double acc = 0.0;
    for (std::size_t t = 0; t < l; ++t) acc += z(t, i) * z(t, j);
    CHECK(c(i, j) == acc);
    // PSD: x^T C x = ||Z x||^2 >= 0
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    double q = 0.0, trace = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      trace += c(a, a);
      for (std::size_t b = 0; b < n; ++b) q += x[a] * c(a, b) * x[b];
    }
    CHECK(q >= -1e-9 * trace * l2_norm(x) * l2_norm(x));
  }
}

TEST_CASE("softmax") {
  auto a = softmax(std::vector<double>{0, 0});
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);
  auto b = softmax(std::vector<double>{std::log(3.0), 0});
  CHECK(b[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(b[1] == doctest::Approx(0.25).epsilon(1e-15));
  auto c = softmax(std::vector<double>{1000, 0});
  CHECK(std::isfinite(c[0]));
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] >= 0.0);
  CHECK(c[1] < 1e-300);
  CHECK_THROWS_AS(softmax(std::vector<double>{}), ParameterError);

  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(rng.between(1, 50));
    for (auto& x : v) x = rng.uniform(-20, 20);
    const auto p = softmax(v);
    CHECK(std::abs(exact_sum(p) - 1.0) <= 1e-12);
    const double shift = rng.uniform(-100, 100);
    auto w = v;
    for (auto& x : w) x += shift;
    const auto q = softmax(w);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
    const auto lp = log_softmax(v);
    for (std::size_t i = 0; i < v.size(); ++i)
      CHECK(std::abs(std::exp(lp[i]) - p[i]) <= 1e-14);
  }
}

TEST_CASE("spectral norm by power iteration") {
  CHECK(spectral_norm(Matrix::identity(3)).value == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(spectral_norm(Matrix{{2, 0}, {0, 0.5}}).value == doctest::Approx(2.0).epsilon(1e-9));
  const auto shift = spectral_norm(Matrix{{0, 1}, {0, 0}});
  CHECK(std::abs(shift.value - 1.0) <= 1e-6);
  CHECK(spectral_norm(Matrix(3, 3)).value == 0.0);

  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix m(rng.between(1, 7), rng.between(1, 7));
    for (auto& x : m.data()) x = rng.normal();
    const double s = spectral_norm(m).value;
    CHECK(s <= frobenius_norm(m) * (1 + 1e-12));
    // largest column norm is a lower bound
    double col = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) acc += m(i, j) * m(i, j);
      col = std::max(col, std::sqrt(acc));
    }
    CHECK(s >= col * (1 - 1e-9));
  }
}

TEST_CASE("exact sum is order independent and correctly rounded") {
  std::vector<double> v = {1e100, 1.0, -1e100, 1e-20};
  CHECK(exact_sum(v) == 1.0);
  Rng rng(17);
  std::vector<double> w(1000);
  for (auto& x : w) x = rng.normal() * std::pow(10.0, rng.uniform(-10, 10));
  const double s = exact_sum(w);
  for (int k = 0; k < 10; ++k) {
    for (std::size_t i = w.size() - 1; i > 0; --i) std::swap(w[i], w[rng.index(i + 1)]);
    CHECK(exact_sum(w) == s);
  }
  CHECK(exact_sum(std::vector<double>{}) == 0.0);
}

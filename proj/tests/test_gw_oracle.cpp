// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gld/errors.hpp"
#include "gld/graph.hpp"
#include "gld/gw_oracle.hpp"
#include "gld/losses.hpp"
#include "gld/random.hpp"

using namespace gld;

namespace {

Matrix random_matrix(Rng& rng, std::size_t n) {
  Matrix m(n, n);
  for (auto& x : m.data()) x = rng.normal();
  return m;
}

std::vector<double> uniform(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

Matrix relabel(const Matrix& c, const std::vector<std::size_t>& pi) {
  Matrix out(c.rows(), c.cols());
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) out(pi[i], pi[j]) = c(i, j);
  return out;
}

}  // namespace

TEST_CASE("gw cost examples") {
  const Matrix id = Matrix::identity(2);
  const Matrix swap{{0, 1}, {1, 0}};
  const Matrix two{{0, 2}, {2, 0}};
  CHECK(gw_cost(id, swap, uniform_plan(2, 2)) == 0.5);
  CHECK(gw_cost(swap, two, permutation_plan(std::vector<std::size_t>{0, 1})) == 0.5);
  CHECK(gw_cost(swap, swap, permutation_plan(std::vector<std::size_t>{0, 1})) == 0.0);
  CHECK_THROWS_AS(gw_cost(id, Matrix::identity(3), uniform_plan(2, 2)), ShapeError);

  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix c = random_matrix(rng, rng.between(1, 6));
    const Matrix d = random_matrix(rng, rng.between(1, 6));
    const auto p = uniform_plan(c.rows(), d.rows());
    CHECK(gw_cost(c, d, p) == gw_cost(d, c, p.transposed()));
  }
}

TEST_CASE("uniform plan") {
  const auto p = uniform_plan(2, 2);
  for (double x : p.gamma.data()) CHECK(x == 0.25);
  const auto r = uniform_plan(1, 3);
  for (double x : r.gamma.data()) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const auto q = uniform_plan(3, 2);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(exact_sum(q.gamma.row(i)) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  q.validate();
  CHECK_THROWS_AS(uniform_plan(0, 2), ParameterError);
  TransportPlan bad = uniform_plan(2, 2);
  bad.gamma(0, 0) = -0.25;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("feature surrogate and identity") {
  const Matrix id = Matrix::identity(2);
  const Matrix swap{{0, 1}, {1, 0}};
  CHECK(feature_approx_cost(swap, swap, uniform_plan(2, 2)) == 0.0);
  CHECK(feature_approx_cost(id, swap, uniform_plan(2, 2)) == 0.0);

  const auto t = identity_terms(id, swap);
  CHECK(t.a - t.b == 8.0);
  CHECK(t.var_c == 0.25);
  CHECK(t.residual == 0.0);
  const Matrix flat(3, 3, 0.5);
  const auto z = identity_terms(flat, flat);
  CHECK(z.a == 0.0);
  CHECK(z.b == 0.0);
  CHECK(z.residual == 0.0);

  Rng rng(73);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = rng.between(2, 7);
    const Matrix c = random_matrix(rng, n), d = random_matrix(rng, n);
    // under the uniform plan with n = m the surrogate collapses to (mu_C - mu_D)^2
    const double mc = global_mean(c), md = global_mean(d);
    CHECK(feature_approx_cost(c, d, uniform_plan(n, n)) ==
          doctest::Approx((mc - md) * (mc - md)).epsilon(1e-10));
  }
  const Matrix c5 = random_matrix(rng, 5), d3 = random_matrix(rng, 3);
  CHECK(identity_terms(c5, d3).relative_residual() <= 1e-9);
}

TEST_CASE("absolute product surrogate dominates the signed one") {
  const Matrix a{{0, 1}, {1, 0}};
  const Matrix b{{2, 0}, {0, 0}};
  const auto p = uniform_plan(2, 2);
  const double s = feature_approx_cost(a, b, p, FeatureCostForm::SignedProduct);
  const double u = feature_approx_cost(a, b, p, FeatureCostForm::AbsoluteProduct);
  CHECK(u >= s);
  CHECK(feature_approx_cost(a, a, p, FeatureCostForm::AbsoluteProduct) ==
        doctest::Approx(0.0));
}

TEST_CASE("error bound records") {
  const auto r = check_bound(one_hot_matrix(2), one_hot_matrix(2));
  CHECK(r.gw_uniform == 0.5);
  CHECK(r.approx_uniform == 0.0);
  CHECK(r.bound == 0.5);
  CHECK(std::abs(r.abs_err() - r.bound) <= 1e-12);
  CHECK(r.holds());

  Rng rng(79);
  const auto s = check_bound(random_row_stochastic(3, rng), random_row_stochastic(2, rng));
  CHECK(s.bound == 2.0 / 9 + 1.0 / 4);
  CHECK(s.bound == doctest::Approx(0.47222).epsilon(1e-5));
  CHECK(s.holds());
  const auto u = check_bound(Matrix(3, 3, 1.0 / 3), Matrix(3, 3, 1.0 / 3));
  CHECK(u.abs_err() <= 1e-15);
  CHECK_THROWS_AS(check_bound(Matrix::identity(2) + Matrix::identity(2), one_hot_matrix(2)),
                  ValidationError);
  CHECK_THROWS_AS(check_bound(Matrix{{2, -1}, {0, 1}}, one_hot_matrix(2)), ValidationError);
}

TEST_CASE("worst case row variance") {
  CHECK(worst_case_row_variance(2) == 0.25);
  CHECK(worst_case_row_variance(4) == 3.0 / 16);
  CHECK(rms_variance(one_hot_matrix(4)) == 3.0 / 16);
  Rng rng(83);
  for (int trial = 0; trial < 2000; ++trial) {
    const Matrix m = random_row_stochastic(4, rng);
    CHECK(is_row_stochastic(m));
    CHECK(rms_variance(m) <= 3.0 / 16 + 1e-12);
  }
}

TEST_CASE("brute force permutation search") {
  Rng rng(89);
  const Matrix c = random_matrix(rng, 5);
  const auto same = gw_bruteforce_perm(c, c);
  CHECK(same.cost == 0.0);
  CHECK(same.perm == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(gw_bruteforce_perm(Matrix{{0, 1}, {1, 0}}, Matrix{{0, 2}, {2, 0}}).cost == 0.5);

  std::vector<std::size_t> pi = {3, 0, 4, 1, 2};
  const auto rel = gw_bruteforce_perm(c, relabel(c, pi));
  CHECK(rel.cost == 0.0);
  CHECK(rel.perm == pi);

  CHECK_THROWS_AS(gw_bruteforce_perm(Matrix::identity(2), Matrix::identity(3)), ParameterError);
  CHECK_THROWS_AS(gw_bruteforce_perm(Matrix::identity(9), Matrix::identity(9)), ParameterError);

  // an independent check of the minimum by direct enumeration with std::next_permutation
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = rng.between(1, 5);
    const Matrix a = random_matrix(rng, n), b = random_matrix(rng, n);
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    double best = INFINITY;
    do {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double diff = a(i, j) - b(p[i], p[j]);
          acc += diff * diff;
        }
      best = std::min(best, acc / static_cast<double>(n * n));
    } while (std::next_permutation(p.begin(), p.end()));
    const double got = gw_bruteforce_perm(a, b).cost;
    CHECK(got >= 0.0);
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("entropic solver") {
  Rng rng(97);
  const Matrix c = gram_matrix([&] {
    Matrix z(4, 5);
    for (auto& x : z.data()) x = rng.uniform();
    return z;
  }());
  const auto same = gw_entropic(c, c, uniform(5), uniform(5), default_entropic_epsilon(c, c));
  CHECK(same.cost <= 1e-6);
  for (std::size_t i = 0; i < 5; ++i) CHECK(same.plan.gamma(i, i) >= 0.19);

  const Matrix oh = one_hot_matrix(2);
  const auto e = gw_entropic(oh, oh, uniform(2), uniform(2), 0.01);
  CHECK(std::abs(e.cost - gw_bruteforce_perm(oh, oh).cost) <= 1e-3);

  const Matrix d = random_matrix(rng, 4);
  const Matrix f = random_matrix(rng, 3);
  const auto big = gw_entropic(d, f, uniform(4), uniform(3), 1e9);
  const auto up = uniform_plan(4, 3);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(big.plan.gamma.data()[i] - up.gamma.data()[i]) <= 1e-6);

  std::vector<double> a = {0.1, 0.2, 0.3, 0.4}, b = {0.5, 0.25, 0.25};
  const auto w = gw_entropic(d, f, a, b, 0.05);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(exact_sum(w.plan.gamma.row(i)) - a[i]) <= 1e-8);
  for (std::size_t k = 0; k < 3; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += w.plan.gamma(i, k);
    CHECK(std::abs(s - b[k]) <= 1e-8);
  }
  for (double x : w.plan.gamma.data()) CHECK(x >= 0.0);
  CHECK(w.cost == doctest::Approx(gw_cost(d, f, w.plan)).epsilon(1e-14));

  CHECK_THROWS_AS(gw_entropic(d, f, a, b, 0.0), ParameterError);
  CHECK_THROWS_AS(gw_entropic(d, f, a, std::vector<double>{0.5, 0.5, 0.5}, 0.1), ParameterError);
  CHECK(default_entropic_epsilon(Matrix{{0, 2}, {2, 0}}, Matrix{{0, 4}, {4, 0}}) == 0.05 * 3.0);
}

TEST_CASE("sorted matching reproduced with long double features") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = rng.between(2, 6), l = rng.between(1, 4);
    Matrix zs(l, n), zp(l, n);
    for (auto& x : zs.data()) x = rng.normal();
    for (auto& x : zp.data()) x = rng.normal();
    const auto fs = make_features(row_means(gram_matrix(zs)));
    const auto fp = make_features(row_means(gram_matrix(zp)));
    const double got = gld_pairwise(fs, fp).loss;

    const auto ext = [&](const Matrix& z) {
      std::vector<long double> f(n, 0.0L);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          long double cij = 0.0L;
          for (std::size_t t = 0; t < l; ++t) cij += static_cast<long double>(z(t, i)) * z(t, j);
          f[i] += cij;
        }
        f[i] /= static_cast<long double>(n);
      }
      std::sort(f.begin(), f.end(), std::greater<>());
      return f;
    };
    const auto a = ext(zs), b = ext(zp);
    long double want = 0.0L;
    for (std::size_t i = 0; i < n; ++i) want += std::fabs(a[i] - b[i]);
    CHECK(std::abs(got - static_cast<double>(want)) <= 1e-12 * std::max(1.0, static_cast<double>(want)));
  }
}

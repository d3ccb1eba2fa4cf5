// SPDX-License-Identifier: Apache-2.0
//
// Reference Gromov-Wasserstein computations used to check the sorted
// approximation: the exact quadruple-sum cost under a given coupling, the
// feature-separable surrogate, the variance identity behind the uniform-plan
// error bound, and two solvers (exhaustive permutations, entropic).
//
// Everything here favours directness over speed. The quadruple loops are
// O(n^2 m^2) and meant for n, m in the tens.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gld/random.hpp"
#include "gld/tensor.hpp"

namespace gld {

struct TransportPlan {
  Matrix gamma;           // n x m masses
  std::vector<double> a;  // row marginal, length n
  std::vector<double> b;  // column marginal, length m

  std::size_t rows() const { return gamma.rows(); }
  std::size_t cols() const { return gamma.cols(); }

  /// ValidationError unless masses are >= 0 and the marginals match within tol.
  void validate(double tol = 1e-12) const;
  TransportPlan transposed() const;
};

/// gamma(i,k) = 1/(nm). ParameterError when n or m is zero.
TransportPlan uniform_plan(std::size_t n, std::size_t m);

/// gamma = P / n for the permutation i -> perm[i].
TransportPlan permutation_plan(std::span<const std::size_t> perm);

/// sum_{i,j,k,l} (C(i,j) - D(k,l))^2 gamma(i,k) gamma(j,l), loops in (i,j,k,l) order.
double gw_cost(const Matrix& c, const Matrix& d, const TransportPlan& plan);

enum class FeatureCostForm {
  SignedProduct,    // (fC(i)-fD(k)) (fC(j)-fD(l)), the form the error bound is proved for
  AbsoluteProduct,  // |fC(i)-fD(k)| |fC(j)-fD(l)|
};

/// Feature-separable surrogate of gw_cost under `plan`, evaluated by quadruple loop.
double feature_approx_cost(const Matrix& c, const Matrix& d, const TransportPlan& plan,
                           FeatureCostForm form = FeatureCostForm::SignedProduct);

double global_mean(const Matrix& m);
/// Mean squared deviation of all entries from the global mean.
double rms_variance(const Matrix& m);

/// Unweighted sums A = sum |C - D|^2, B = sum of signed feature products, and
/// the identity A - B = n^2 m^2 (var_C + var_D).
struct IdentityTerms {
  double a = 0.0;
  double b = 0.0;
  double mu_c = 0.0;
  double mu_d = 0.0;
  double var_c = 0.0;
  double var_d = 0.0;
  double residual = 0.0;  // |(A - B) - n^2 m^2 (var_C + var_D)|

  /// residual / A, or the plain residual when A == 0.
  double relative_residual() const;
};

IdentityTerms identity_terms(const Matrix& c, const Matrix& d);
double identity_residual(const Matrix& c, const Matrix& d);

bool is_row_stochastic(const Matrix& m, double tol = 1e-12);

struct BoundCheckRecord {
  std::size_t n = 0;
  std::size_t m = 0;
  double gw_uniform = 0.0;
  double approx_uniform = 0.0;
  double bound = 0.0;  // (n-1)/n^2 + (m-1)/m^2
  double identity_residual = 0.0;
  double mu_c = 0.0;
  double mu_d = 0.0;
  double var_c = 0.0;
  double var_d = 0.0;

  double abs_err() const;
  bool holds(double slack = 1e-12) const { return abs_err() <= bound + slack; }
};

/// Uniform-plan error against the bound. ValidationError unless both inputs
/// are row-stochastic.
BoundCheckRecord check_bound(const Matrix& c, const Matrix& d);

/// Random n x n row-stochastic matrix. Rows are normalized u^p with u uniform
/// and p drawn once per matrix from [1, 8], so sharpness varies from nearly
/// flat to nearly one-hot; about one row in ten is exactly one-hot.
Matrix random_row_stochastic(std::size_t n, Rng& rng);

/// Constant one-hot matrix: every row puts its mass on column 0.
Matrix one_hot_matrix(std::size_t n);

/// (n-1)/n^2: the RMS variance of a one-hot row-stochastic n x n matrix.
double worst_case_row_variance(std::size_t n);

struct PermutationSearch {
  double cost = 0.0;
  std::vector<std::size_t> perm;
};

/// Minimum of gw_cost over the n! permutation couplings (ties resolved to the
/// lexicographically smallest permutation). An upper bound on the GW optimum.
/// ParameterError unless C and D are both n x n with 1 <= n <= 8.
PermutationSearch gw_bruteforce_perm(const Matrix& c, const Matrix& d);

struct EntropicResult {
  double cost = 0.0;  // unregularized gw_cost of the final plan
  TransportPlan plan;
  bool converged = false;
  std::size_t outer_iterations = 0;
  double epsilon = 0.0;
};

/// 0.05 times the mean of the entry ranges (max - min) of C and D, floored at 1e-6.
double default_entropic_epsilon(const Matrix& c, const Matrix& d);

/// Entropic GW by proximal linearization: each outer step linearizes the
/// quadratic cost at the current plan and solves the KL-proximal transport
/// problem with log-domain Sinkhorn scaling. Stops when the max-abs change of
/// the plan drops below `tol`.
EntropicResult gw_entropic(const Matrix& c, const Matrix& d, std::span<const double> a,
                           std::span<const double> b, double epsilon, std::size_t max_outer = 10000,
                           double tol = 1e-7);

}  // namespace gld

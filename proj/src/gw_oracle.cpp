// SPDX-License-Identifier: Apache-2.0
#include "gld/gw_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "gld/errors.hpp"
#include "gld/graph.hpp"

namespace gld {
namespace {

void require_square(const Matrix& m, const char* name) {
  if (!m.square() || m.rows() == 0) {
    throw ShapeError(std::string(name) + " must be a non-empty square matrix");
  }
}

void require_plan_shape(const Matrix& c, const Matrix& d, const TransportPlan& plan) {
  require_square(c, "C");
  require_square(d, "D");
  if (plan.rows() != c.rows() || plan.cols() != d.rows()) {
    throw ShapeError("transport plan is " + std::to_string(plan.rows()) + "x" +
                     std::to_string(plan.cols()) + ", expected " + std::to_string(c.rows()) +
                     "x" + std::to_string(d.rows()));
  }
}

double log_sum_exp(std::span<const double> v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v) top = std::max(top, x);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - top);
  return top + std::log(acc);
}

}  // namespace

void TransportPlan::validate(double tol) const {
  if (a.size() != rows() || b.size() != cols()) throw ShapeError("marginal length mismatch");
  for (double x : gamma.data()) {
    if (!(x >= 0.0)) throw ValidationError("transport plan has a negative or NaN mass");
  }
  for (std::size_t i = 0; i < rows(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < cols(); ++k) s += gamma(i, k);
    if (std::abs(s - a[i]) > tol) throw ValidationError("row marginal violated");
  }
  for (std::size_t k = 0; k < cols(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows(); ++i) s += gamma(i, k);
    if (std::abs(s - b[k]) > tol) throw ValidationError("column marginal violated");
  }
}

TransportPlan TransportPlan::transposed() const { return {gamma.transposed(), b, a}; }

TransportPlan uniform_plan(std::size_t n, std::size_t m) {
  if (n == 0 || m == 0) throw ParameterError("uniform_plan needs n, m >= 1");
  const double mass = 1.0 / (static_cast<double>(n) * static_cast<double>(m));
  return {Matrix(n, m, mass), std::vector<double>(n, 1.0 / static_cast<double>(n)),
          std::vector<double>(m, 1.0 / static_cast<double>(m))};
}

TransportPlan permutation_plan(std::span<const std::size_t> perm) {
  const std::size_t n = perm.size();
  if (n == 0) throw ParameterError("permutation_plan needs a non-empty permutation");
  const double mass = 1.0 / static_cast<double>(n);
  TransportPlan plan{Matrix(n, n), std::vector<double>(n, mass), std::vector<double>(n, mass)};
  for (std::size_t i = 0; i < n; ++i) plan.gamma(i, perm[i]) = mass;
  return plan;
}

double gw_cost(const Matrix& c, const Matrix& d, const TransportPlan& plan) {
  require_plan_shape(c, d, plan);
  const std::size_t n = c.rows();
  const std::size_t m = d.rows();
  const Matrix& g = plan.gamma;
  // correctly rounded, so swapping (C, D) with the transposed plan is exact
  ExactSum total;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < m; ++k)
        for (std::size_t l = 0; l < m; ++l) {
          const double diff = c(i, j) - d(k, l);
          total.add(diff * diff * g(i, k) * g(j, l));
        }
  return total.value();
}

double feature_approx_cost(const Matrix& c, const Matrix& d, const TransportPlan& plan,
                           FeatureCostForm form) {
  require_plan_shape(c, d, plan);
  const auto fc = row_means(c);
  const auto fd = row_means(d);
  const std::size_t n = c.rows();
  const std::size_t m = d.rows();
  const Matrix& g = plan.gamma;
  const bool absolute = form == FeatureCostForm::AbsoluteProduct;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < m; ++k)
        for (std::size_t l = 0; l < m; ++l) {
          double left = fc[i] - fd[k];
          double right = fc[j] - fd[l];
          if (absolute) {
            left = std::abs(left);
            right = std::abs(right);
          }
          total += left * right * g(i, k) * g(j, l);
        }
  return total;
}

double global_mean(const Matrix& m) {
  if (m.data().empty()) throw ParameterError("mean of an empty matrix");
  double s = 0.0;
  for (double x : m.data()) s += x;
  return s / static_cast<double>(m.data().size());
}

double rms_variance(const Matrix& m) {
  const double mu = global_mean(m);
  double s = 0.0;
  for (double x : m.data()) s += (x - mu) * (x - mu);
  return s / static_cast<double>(m.data().size());
}

double IdentityTerms::relative_residual() const { return a == 0.0 ? residual : residual / a; }

IdentityTerms identity_terms(const Matrix& c, const Matrix& d) {
  require_square(c, "C");
  require_square(d, "D");
  const std::size_t n = c.rows();
  const std::size_t m = d.rows();
  const auto fc = row_means(c);
  const auto fd = row_means(d);

  IdentityTerms t;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < m; ++k)
        for (std::size_t l = 0; l < m; ++l) {
          const double diff = c(i, j) - d(k, l);
          t.a += diff * diff;
          t.b += (fc[i] - fd[k]) * (fc[j] - fd[l]);
        }
  t.mu_c = global_mean(c);
  t.mu_d = global_mean(d);
  t.var_c = rms_variance(c);
  t.var_d = rms_variance(d);
  const double scale = static_cast<double>(n * n) * static_cast<double>(m * m);
  t.residual = std::abs((t.a - t.b) - scale * (t.var_c + t.var_d));
  return t;
}

double identity_residual(const Matrix& c, const Matrix& d) { return identity_terms(c, d).residual; }

bool is_row_stochastic(const Matrix& m, double tol) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double x : m.row(i)) {
      if (!(x >= 0.0)) return false;
      s += x;
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

double BoundCheckRecord::abs_err() const { return std::abs(gw_uniform - approx_uniform); }

BoundCheckRecord check_bound(const Matrix& c, const Matrix& d) {
  require_square(c, "C");
  require_square(d, "D");
  if (!is_row_stochastic(c)) throw ValidationError("C is not row-stochastic");
  if (!is_row_stochastic(d)) throw ValidationError("D is not row-stochastic");

  const std::size_t n = c.rows();
  const std::size_t m = d.rows();
  const TransportPlan plan = uniform_plan(n, m);
  const IdentityTerms terms = identity_terms(c, d);

  BoundCheckRecord r;
  r.n = n;
  r.m = m;
  r.gw_uniform = gw_cost(c, d, plan);
  r.approx_uniform = feature_approx_cost(c, d, plan);
  r.bound = worst_case_row_variance(n) + worst_case_row_variance(m);
  r.identity_residual = terms.relative_residual();
  r.mu_c = terms.mu_c;
  r.mu_d = terms.mu_d;
  r.var_c = terms.var_c;
  r.var_d = terms.var_d;
  return r;
}

Matrix random_row_stochastic(std::size_t n, Rng& rng) {
  if (n == 0) throw ParameterError("random_row_stochastic needs n >= 1");
  Matrix m(n, n);
  const double power = rng.uniform(1.0, 8.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = m.row(i);
    if (rng.uniform() < 0.1) {
      row[rng.index(n)] = 1.0;
      continue;
    }
    for (double& x : row) x = std::pow(rng.uniform(), power);
    const double total = exact_sum(row);
    if (total > 0.0) {
      for (double& x : row) x /= total;
    } else {
      row[0] = 1.0;
    }
  }
  return m;
}

Matrix one_hot_matrix(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, 0) = 1.0;
  return m;
}

double worst_case_row_variance(std::size_t n) {
  if (n == 0) throw ParameterError("worst_case_row_variance needs n >= 1");
  const double x = static_cast<double>(n);
  return (x - 1.0) / (x * x);
}

PermutationSearch gw_bruteforce_perm(const Matrix& c, const Matrix& d) {
  if (!c.square() || !d.square() || c.rows() != d.rows()) {
    throw ParameterError("gw_bruteforce_perm needs C and D of equal square size");
  }
  const std::size_t n = c.rows();
  if (n == 0 || n > 8) throw ParameterError("gw_bruteforce_perm supports 1 <= n <= 8");

  // Under gamma = P/n the quadruple sum collapses to
  // (1/n^2) sum_{i,j} (C(i,j) - D(pi(i), pi(j)))^2.
  const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  PermutationSearch best{std::numeric_limits<double>::infinity(), perm};
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double diff = c(i, j) - d(perm[i], perm[j]);
        total += diff * diff;
      }
    total *= inv;
    if (total < best.cost) best = {total, perm};
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double default_entropic_epsilon(const Matrix& c, const Matrix& d) {
  auto range = [](const Matrix& m) {
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    return *hi - *lo;
  };
  return std::max(0.05 * 0.5 * (range(c) + range(d)), 1e-6);
}

namespace {

constexpr std::size_t kInnerSteps = 64;
constexpr int kAnnealLevels = 6;

// Alternating log-domain scaling; stops once row sums are within tol of a.
void sinkhorn(const Matrix& log_kernel, const std::vector<double>& log_a,
              const std::vector<double>& log_b, std::span<const double> a, std::vector<double>& f,
              std::vector<double>& g, std::vector<double>& scratch, std::size_t max_it,
              double tol) {
  const std::size_t n = log_kernel.rows();
  const std::size_t m = log_kernel.cols();
  for (std::size_t it = 0; it < max_it; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < m; ++k) scratch[k] = log_kernel(i, k) + g[k];
      f[i] = log_a[i] - log_sum_exp(std::span<const double>(scratch.data(), m));
    }
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t i = 0; i < n; ++i) scratch[i] = log_kernel(i, k) + f[i];
      g[k] = log_b[k] - log_sum_exp(std::span<const double>(scratch.data(), n));
    }
    // columns are exact after the g update; check rows
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += std::exp(log_kernel(i, k) + f[i] + g[k]);
      worst = std::max(worst, std::abs(s - a[i]));
    }
    if (worst < tol) return;
  }
}

// Scale rows then columns down to their targets, then spread the remaining
// deficit as a rank-one correction so both marginals hold.
void round_to_marginals(Matrix& gamma, std::span<const double> a, std::span<const double> b) {
  const std::size_t n = gamma.rows();
  const std::size_t m = gamma.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) s += gamma(i, k);
    if (s > a[i])
      for (std::size_t k = 0; k < m; ++k) gamma(i, k) *= a[i] / s;
  }
  for (std::size_t k = 0; k < m; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += gamma(i, k);
    if (s > b[k])
      for (std::size_t i = 0; i < n; ++i) gamma(i, k) *= b[k] / s;
  }
  std::vector<double> er(n), ec(m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) s += gamma(i, k);
    er[i] = std::max(0.0, a[i] - s);
    total += er[i];
  }
  for (std::size_t k = 0; k < m; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += gamma(i, k);
    ec[k] = std::max(0.0, b[k] - s);
  }
  if (total <= 0.0) return;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) gamma(i, k) += er[i] * ec[k] / total;
}

EntropicResult run_entropic(const Matrix& c, const Matrix& d, std::span<const double> a,
                            std::span<const double> b, double epsilon, std::size_t max_outer,
                            double tol, const Matrix& start, bool proximal) {
  const std::size_t n = c.rows();
  const std::size_t m = d.rows();

  std::vector<double> log_a(n), log_b(m);
  for (std::size_t i = 0; i < n; ++i) log_a[i] = std::log(a[i]);
  for (std::size_t k = 0; k < m; ++k) log_b[k] = std::log(b[k]);

  // Half the gradient of the quadratic cost; both index orders are averaged
  // so C and D need not be symmetric:
  // cost(i,k) = (sq_c(i) + sq_d(k)) - (C gamma D^T + C^T gamma D)(i,k)
  std::vector<double> c_sq(n, 0.0), d_sq(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      c_sq[i] += 0.5 * (c(i, j) * c(i, j) + c(j, i) * c(j, i)) * a[j];
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t l = 0; l < m; ++l)
      d_sq[k] += 0.5 * (d(k, l) * d(k, l) + d(l, k) * d(l, k)) * b[l];
  const Matrix ct = c.transposed();
  const Matrix dt = d.transposed();

  Matrix gamma = start;
  Matrix log_gamma(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) log_gamma(i, k) = std::log(gamma(i, k));

  EntropicResult result;
  result.epsilon = epsilon;
  Matrix cg(n, m), ctg(n, m), linear(n, m), log_kernel(n, m);
  std::vector<double> f(n, 0.0), g(m, 0.0), scratch(std::max(n, m));

  for (std::size_t outer = 1; outer <= max_outer; ++outer) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < m; ++l) {
        double acc = 0.0, acc_t = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          acc += c(i, j) * gamma(j, l);
          acc_t += ct(i, j) * gamma(j, l);
        }
        cg(i, l) = acc;
        ctg(i, l) = acc_t;
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < m; ++k) {
        double acc = 0.0;
        for (std::size_t l = 0; l < m; ++l) acc += cg(i, l) * d(k, l) + ctg(i, l) * dt(k, l);
        linear(i, k) = c_sq[i] + d_sq[k] - acc;
        const double prior = proximal ? log_gamma(i, k) : log_a[i] + log_b[k];
        log_kernel(i, k) = prior - linear(i, k) / epsilon;
      }

    // log_gamma already carries the previous potentials, so each solve
    // starts from zero. Inner solves are inexact; the final plan is projected
    // tightly below.
    sinkhorn(log_kernel, log_a, log_b, a, f, g, scratch, kInnerSteps, 1e-10);
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < m; ++k) {
        log_gamma(i, k) = log_kernel(i, k) + f[i] + g[k];
        const double next = std::exp(log_gamma(i, k));
        change = std::max(change, std::abs(next - gamma(i, k)));
        gamma(i, k) = next;
      }
    result.outer_iterations = outer;
    if (change < tol) {
      result.converged = true;
      break;
    }
  }

  // Sinkhorn can crawl when the plan is nearly a permutation, so finish
  // with a short solve and the rounding step of Altschuler et al.
  std::fill(f.begin(), f.end(), 0.0);
  std::fill(g.begin(), g.end(), 0.0);
  sinkhorn(log_gamma, log_a, log_b, a, f, g, scratch, 1000, 1e-14);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) gamma(i, k) = std::exp(log_gamma(i, k) + f[i] + g[k]);
  round_to_marginals(gamma, a, b);

  result.plan = {gamma, std::vector<double>(a.begin(), a.end()),
                 std::vector<double>(b.begin(), b.end())};
  result.cost = gw_cost(c, d, result.plan);
  return result;
}

}  // namespace

EntropicResult gw_entropic(const Matrix& c, const Matrix& d, std::span<const double> a,
                           std::span<const double> b, double epsilon, std::size_t max_outer,
                           double tol) {
  require_square(c, "C");
  require_square(d, "D");
  const std::size_t n = c.rows();
  const std::size_t m = d.rows();
  if (a.size() != n || b.size() != m) throw ShapeError("marginal length mismatch");
  if (!(epsilon > 0.0)) throw ParameterError("gw_entropic needs epsilon > 0");
  double mass_a = 0.0, mass_b = 0.0;
  for (double x : a) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ParameterError("marginal entries must be positive");
    mass_a += x;
  }
  for (double x : b) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ParameterError("marginal entries must be positive");
    mass_b += x;
  }
  if (std::abs(mass_a - mass_b) > 1e-12) throw ParameterError("marginals carry different mass");

  Matrix product(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) product(i, k) = a[i] * b[k];
  // Plain entropic GW (prior a b^T) tracked down from 64 epsilon, then the
  // proximal iteration at epsilon starting from where the homotopy ends.
  Matrix plan = product;
  for (int level = kAnnealLevels; level >= 1; --level) {
    plan = run_entropic(c, d, a, b, std::ldexp(epsilon, level), max_outer, tol, plan, false)
               .plan.gamma;
  }
  return run_entropic(c, d, a, b, epsilon, max_outer, tol, plan, true);
}

}  // namespace gld

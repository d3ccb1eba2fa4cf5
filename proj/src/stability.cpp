// SPDX-License-Identifier: Apache-2.0
#include "gld/stability.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "gld/errors.hpp"
#include "gld/losses.hpp"
#include "gld/parallel.hpp"
#include "gld/random.hpp"

namespace gld {

LossKind parse_loss_kind(std::string_view text) {
  if (text == "gw_appendix") return LossKind::GwAppendix;
  if (text == "w1_simplex") return LossKind::W1Simplex;
  if (text == "kl_softmax") return LossKind::KlSoftmax;
  throw ParameterError("unknown loss kind '" + std::string(text) + "'");
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::GwAppendix: return "gw_appendix";
    case LossKind::W1Simplex: return "w1_simplex";
    case LossKind::KlSoftmax: return "kl_softmax";
  }
  return "?";
}

namespace {

std::vector<double> clipped(std::span<const double> v, double r) {
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x = std::clamp(x, -r, r);
  return out;
}

void zero_clipped(std::vector<double>& grad, std::span<const double> s, double r) {
  for (std::size_t p = 0; p < grad.size(); ++p)
    if (std::abs(s[p]) > r) grad[p] = 0.0;
}

void require_same_length(std::span<const double> t, std::span<const double> s) {
  if (t.size() != s.size()) {
    throw ShapeError("teacher has length " + std::to_string(t.size()) + ", student " +
                     std::to_string(s.size()));
  }
}

std::vector<double> centred(std::span<const double> x) {
  const double mean = exact_sum(x) / static_cast<double>(x.size());
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v -= mean;
  return out;
}

template <class F>
double sum_of(std::size_t n, F&& term) {
  ExactSum acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(term(i));
  return acc.value();
}

}  // namespace

VectorLoss gw_appendix_loss(std::span<const double> t, std::span<const double> s, double lambda,
                            double r) {
  require_same_length(t, s);
  if (s.size() < 2) throw ParameterError("gw_appendix_loss needs D >= 2");
  const std::size_t d = s.size();
  const double dd = static_cast<double>(d);
  // C_X depends only on differences, so both vectors are centred first
  const auto u = centred(clipped(t, r));
  const auto v = centred(clipped(s, r));
  const double suu = sum_of(d, [&](std::size_t i) { return u[i] * u[i]; });
  const double svv = sum_of(d, [&](std::size_t i) { return v[i] * v[i]; });
  const double suv = sum_of(d, [&](std::size_t i) { return u[i] * v[i]; });
  const double suuv = sum_of(d, [&](std::size_t i) { return u[i] * u[i] * v[i]; });
  const double svvv = sum_of(d, [&](std::size_t i) { return v[i] * v[i] * v[i]; });
  const double sq = sum_of(d, [&](std::size_t i) {
    const double e = u[i] * u[i] - v[i] * v[i];
    return e * e;
  });

  // sum_{k,l} (C_T(k,l) - C_S(k,l))^2
  //   = 2D sum (u^2 - v^2)^2 + 6 (Suu - Svv)^2 + 8 (Suu Svv - Suv^2)
  VectorLoss out;
  const double diff = suu - svv;
  out.loss = lambda / (dd * dd) * (2.0 * dd * sq + 6.0 * diff * diff + 8.0 * (suu * svv - suv * suv));

  // dL/dS_p = -(8 lambda / D^2) sum_l (C_T(p,l) - C_S(p,l)) (v_p - v_l)
  out.grad.resize(d);
  const double scale = -8.0 * lambda / (dd * dd);
  for (std::size_t p = 0; p < d; ++p) {
    const double a = dd * u[p] * u[p] * v[p] + 2.0 * u[p] * suv + v[p] * suu - suuv;
    const double b = dd * v[p] * v[p] * v[p] + 2.0 * v[p] * svv + v[p] * svv - svvv;
    out.grad[p] = scale * (a - b);
  }
  zero_clipped(out.grad, s, r);
  return out;
}

VectorLoss w1_simplex_loss(std::span<const double> t, std::span<const double> s, double lambda,
                           double r) {
  require_same_length(t, s);
  if (s.empty()) throw ParameterError("w1_simplex_loss needs D >= 1");
  const std::size_t d = s.size();
  const auto p = softmax(clipped(t, r));
  const auto q = softmax(clipped(s, r));
  const auto ps = sort_descending(p);
  const auto qs = sort_descending(q);

  std::vector<double> terms(d), dq(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = qs.sorted[i] - ps.sorted[i];
    terms[i] = std::abs(diff);
    dq[qs.perm[i]] = lambda * static_cast<double>((diff > 0.0) - (diff < 0.0));
  }
  VectorLoss out;
  out.loss = lambda * exact_sum(terms);

  // softmax Jacobian: dS = q * (dq - <q, dq>)
  std::vector<double> qdq(d);
  for (std::size_t i = 0; i < d; ++i) qdq[i] = q[i] * dq[i];
  const double inner = exact_sum(qdq);
  out.grad.resize(d);
  for (std::size_t i = 0; i < d; ++i) out.grad[i] = q[i] * (dq[i] - inner);
  zero_clipped(out.grad, s, r);
  return out;
}

VectorLoss kl_softmax_loss(std::span<const double> t, std::span<const double> s, double lambda,
                           double r) {
  require_same_length(t, s);
  const auto tc = clipped(t, r);
  const auto sc = clipped(s, r);
  RowLoss kl = kl_loss(sc, tc);
  VectorLoss out;
  out.loss = lambda * kl.loss;
  out.grad = std::move(kl.grad);
  for (double& g : out.grad) g *= lambda;
  zero_clipped(out.grad, s, r);
  return out;
}

VectorLoss evaluate_loss(LossKind kind, std::span<const double> t, std::span<const double> s,
                         double lambda, double r) {
  switch (kind) {
    case LossKind::GwAppendix: return gw_appendix_loss(t, s, lambda, r);
    case LossKind::W1Simplex: return w1_simplex_loss(t, s, lambda, r);
    case LossKind::KlSoftmax: return kl_softmax_loss(t, s, lambda, r);
  }
  throw ParameterError("unknown loss kind");
}

double gw_coordinate_bound(std::size_t d, double r, double lambda) {
  return 64.0 * lambda * r * r * r / static_cast<double>(d);
}

double w1_norm_bound(std::size_t d, double lambda) {
  return lambda * std::sqrt(static_cast<double>(d)) / 2.0;
}

double kl_norm_bound(std::size_t d, double r, double lambda) {
  return lambda * std::exp(r) * static_cast<double>(d);
}

double theoretical_bound(LossKind kind, std::size_t d, double r, double lambda) {
  switch (kind) {
    case LossKind::GwAppendix: return gw_coordinate_bound(d, r, lambda);
    case LossKind::W1Simplex: return w1_norm_bound(d, lambda);
    case LossKind::KlSoftmax: return kl_norm_bound(d, r, lambda);
  }
  return 0.0;
}

double LipschitzRecord::bounded_quantity() const {
  return loss_kind == LossKind::GwAppendix ? empirical_max_grad_coord : empirical_max_grad_norm;
}

LipschitzRecord estimate_lipschitz(LossKind kind, std::size_t d, double r, double lambda,
                                   std::size_t samples, std::uint64_t seed, std::size_t threads) {
  if (samples == 0) throw ParameterError("estimate_lipschitz needs samples >= 1");
  if (d == 0) throw ParameterError("estimate_lipschitz needs D >= 1");
  if (!(r > 0.0) || !std::isfinite(r)) throw ParameterError("R must be positive and finite");
  std::vector<double> norms(samples), coords(samples);
  parallel_for(samples, threads, [&](std::size_t i) {
    Rng rng(seed + i);
    std::vector<double> t(d), s(d);
    for (double& x : t) x = rng.uniform(-r, r);
    for (double& x : s) x = rng.uniform(-r, r);
    const VectorLoss v = evaluate_loss(kind, t, s, lambda, r);
    norms[i] = l2_norm(v.grad);
    double worst = 0.0;
    for (double g : v.grad) worst = std::max(worst, std::abs(g));
    coords[i] = worst;
  });
  LipschitzRecord rec;
  rec.loss_kind = kind;
  rec.d = d;
  rec.r = r;
  rec.lambda = lambda;
  rec.samples = samples;
  rec.seed = seed;
  rec.theoretical_bound = theoretical_bound(kind, d, r, lambda);
  rec.empirical_max_grad_norm = *std::max_element(norms.begin(), norms.end());
  rec.empirical_max_grad_coord = *std::max_element(coords.begin(), coords.end());
  return rec;
}

StabilityRecord feature_stability_check(const Matrix& c, const Matrix& e) {
  if (!c.square() || !e.square() || c.rows() != e.rows() || c.rows() == 0) {
    throw ShapeError("feature_stability_check needs square C and E of equal size");
  }
  const std::size_t n = c.rows();
  const auto f0 = row_means(c);
  const auto f1 = row_means(c + e);
  std::vector<double> delta(n);
  for (std::size_t i = 0; i < n; ++i) delta[i] = f0[i] - f1[i];
  StabilityRecord rec;
  rec.n = n;
  rec.perturbation_spectral_norm = spectral_norm(e, 20000, 1e-14).value;
  rec.feature_delta_norm = l2_norm(delta);
  rec.lipschitz_bound = rec.perturbation_spectral_norm / std::sqrt(static_cast<double>(n));
  return rec;
}

SortStability sort_stability_check(std::span<const double> v, double perturbation_max,
                                   std::size_t samples, std::uint64_t seed) {
  SortStability out;
  if (v.empty()) throw ParameterError("sort_stability_check needs a non-empty vector");
  const auto base = sort_descending(v);
  out.min_gap = v.size() < 2 ? std::numeric_limits<double>::infinity()
                             : min_sorted_gap(base.sorted);
  out.condition = perturbation_max < out.min_gap / 2.0;
  if (!out.condition) return out;
  Rng rng(seed);
  std::vector<double> w(v.size());
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < v.size(); ++i)
      w[i] = v[i] + rng.uniform(-perturbation_max, perturbation_max);
    if (sort_descending(w).perm != base.perm) ++out.permutation_changes;
  }
  out.samples = samples;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : exact_sum(v) / static_cast<double>(v.size());
}

void append_histogram(std::vector<HistogramRow>& rows, const char* kind,
                      const std::vector<double>& before, const std::vector<double>& after,
                      std::size_t bins) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* v : {&before, &after})
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (!(hi > lo)) hi = lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (const auto& [phase, values] : {std::pair{"before", &before}, std::pair{"after", &after}}) {
    std::vector<std::size_t> counts(bins, 0);
    for (double x : *values) {
      auto b = static_cast<std::size_t>((x - lo) / width);
      counts[std::min(b, bins - 1)] += 1;
    }
    for (std::size_t b = 0; b < bins; ++b) {
      const double b_lo = lo + width * static_cast<double>(b);
      const double b_hi = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
      rows.push_back({phase, kind, b_lo, b_hi, counts[b]});
    }
  }
}

}  // namespace

double SweepReport::mean_uld_before() const { return mean_of(uld_before); }
double SweepReport::mean_uld_after() const { return mean_of(uld_after); }
double SweepReport::mean_gld_before() const { return mean_of(gld_before); }
double SweepReport::mean_gld_after() const { return mean_of(gld_after); }

SweepReport wd_gwd_distribution_sweep(const SweepConfig& cfg, std::uint64_t seed,
                                      std::size_t threads) {
  if (cfg.pairs == 0) throw ParameterError("sweep needs pairs >= 1");
  if (cfg.batch == 0 || cfg.length == 0 || cfg.vocab == 0) {
    throw ParameterError("sweep dimensions must be positive");
  }
  if (cfg.top_k == 0) throw ParameterError("top_k must be >= 1");
  if (cfg.bins == 0) throw ParameterError("bins must be >= 1");
  if (!(cfg.lr >= 0.0)) throw ParameterError("lr must be >= 0");

  SweepReport rep;
  rep.uld_before.resize(cfg.pairs);
  rep.uld_after.resize(cfg.pairs);
  rep.gld_before.resize(cfg.pairs);
  rep.gld_after.resize(cfg.pairs);
  parallel_for(cfg.pairs, threads, [&](std::size_t p) {
    Rng rng(seed + p);
    LogitTensor pivot(cfg.batch, cfg.length, cfg.vocab);
    LogitTensor source(cfg.batch, cfg.length, cfg.vocab);
    for (double& x : pivot.data()) x = cfg.scale * rng.normal();
    for (double& x : source.data()) x = cfg.scale * rng.normal();
    rep.uld_before[p] = uld_batch_loss(pivot, source).loss;
    rep.gld_before[p] = gld_source_loss(pivot, source, cfg.top_k, cfg.mode).loss;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      const BatchLoss u = uld_batch_loss(pivot, source);
      auto g = u.grad.data();
      auto x = pivot.data();
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= cfg.lr * g[i];
    }
    rep.uld_after[p] = uld_batch_loss(pivot, source).loss;
    rep.gld_after[p] = gld_source_loss(pivot, source, cfg.top_k, cfg.mode).loss;
  });
  append_histogram(rep.histogram, "uld", rep.uld_before, rep.uld_after, cfg.bins);
  append_histogram(rep.histogram, "gld", rep.gld_before, rep.gld_after, cfg.bins);
  return rep;
}

std::string histogram_csv(const SweepReport& report) {
  std::string out = "phase,loss_kind,bin_lo,bin_hi,count\n";
  for (const auto& row : report.histogram) {
    out += fmt::format("{},{},{},{},{}\n", row.phase, row.loss_kind, row.bin_lo, row.bin_hi,
                       row.count);
  }
  return out;
}

}  // namespace gld

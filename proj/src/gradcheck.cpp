// SPDX-License-Identifier: Apache-2.0
#include "gld/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <fmt/format.h>

#include "gld/errors.hpp"
#include "gld/losses.hpp"
#include "gld/parallel.hpp"
#include "gld/random.hpp"
#include "gld/stability.hpp"

namespace gld {

const char* to_string(CheckedLoss loss) {
  switch (loss) {
    case CheckedLoss::Uld: return "uld";
    case CheckedLoss::Gld: return "gld";
    case CheckedLoss::Kl: return "kl";
    case CheckedLoss::Sft: return "sft";
    case CheckedLoss::GwAppendix: return "gw_appendix";
    case CheckedLoss::W1Simplex: return "w1_simplex";
  }
  return "?";
}

double GradcheckSummary::excluded_fraction() const {
  const std::size_t total = checked + excluded;
  return total == 0 ? 0.0 : static_cast<double>(excluded) / static_cast<double>(total);
}

bool GradcheckReport::all_pass() const {
  return std::all_of(summaries.begin(), summaries.end(),
                     [](const GradcheckSummary& s) { return s.failures == 0; });
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  const double scale = std::max({l2_norm(a), l2_norm(b), 1e-8});
  return l2_norm(diff) / scale;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// A problem instance flattened to one parameter vector x.
struct Problem {
  std::vector<double> x;
  std::function<double(const std::vector<double>&)> loss;
  std::vector<double> grad;  // analytic, at x
  double margin = kInf;
};

LogitTensor random_logits(Rng& rng, std::size_t b, std::size_t l, std::size_t d, double scale) {
  LogitTensor z(b, l, d);
  for (double& x : z.data()) x = scale * rng.normal();
  return z;
}

LogitTensor with_data(const LogitTensor& shape, const std::vector<double>& x) {
  return LogitTensor(shape.batch(), shape.length(), shape.vocab(), DType::Float64, x);
}

std::vector<double> to_vector(std::span<const double> v) { return {v.begin(), v.end()}; }

// Smallest gap between consecutive descending values where at least one side
// is live (a variable rather than padding).
double live_gap(std::vector<std::pair<double, bool>> v) {
  std::sort(v.begin(), v.end(), [](auto& a, auto& b) { return a.first > b.first; });
  double gap = kInf;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i - 1].second || v[i].second) gap = std::min(gap, v[i - 1].first - v[i].first);
  return gap;
}

double sorted_gap(std::span<const double> v) {
  std::vector<std::pair<double, bool>> w;
  for (double x : v) w.push_back({x, true});
  return live_gap(std::move(w));
}

double matched_gap(std::span<const double> a_sorted, std::span<const double> b_sorted) {
  double gap = kInf;
  const std::size_t k = std::min(a_sorted.size(), b_sorted.size());
  for (std::size_t i = 0; i < k; ++i) gap = std::min(gap, std::abs(a_sorted[i] - b_sorted[i]));
  return gap;
}

Problem make_uld(Rng& rng, const GradcheckConfig& cfg) {
  const std::size_t b = rng.between(1, cfg.max_batch);
  const std::size_t l = rng.between(1, cfg.max_length);
  const std::size_t dp = rng.between(2, cfg.max_vocab);
  const std::size_t ds = rng.between(2, cfg.max_vocab);
  const LogitTensor pivot = random_logits(rng, b, l, dp, cfg.logit_scale);
  const LogitTensor source = random_logits(rng, b, l, ds, cfg.logit_scale);
  Problem p;
  p.x = to_vector(pivot.data());
  p.loss = [pivot, source](const std::vector<double>& x) {
    return uld_batch_loss(with_data(pivot, x), source).loss;
  };
  p.grad = to_vector(uld_batch_loss(pivot, source).grad.data());
  const std::size_t width = std::max(dp, ds);
  for (std::size_t bb = 0; bb < b; ++bb)
    for (std::size_t t = 0; t < l; ++t) {
      std::vector<std::pair<double, bool>> pv;
      std::vector<double> sv(width, 0.0);
      for (double v : pivot.row(bb, t)) pv.push_back({v, true});
      while (pv.size() < width) pv.push_back({0.0, false});
      auto src = source.row(bb, t);
      std::copy(src.begin(), src.end(), sv.begin());
      p.margin = std::min(p.margin, live_gap(pv));
      std::vector<double> ps;
      for (auto& e : pv) ps.push_back(e.first);
      p.margin = std::min(p.margin,
                          matched_gap(sort_descending(ps).sorted, sort_descending(sv).sorted));
    }
  return p;
}

Problem make_gld(Rng& rng, const GradcheckConfig& cfg) {
  const std::size_t b = rng.between(1, cfg.max_batch);
  const std::size_t l = rng.between(1, cfg.max_length);
  const std::size_t dp = rng.between(2, cfg.max_vocab);
  const std::size_t ds = rng.between(2, cfg.max_vocab);
  const std::size_t k = rng.between(1, cfg.max_k);
  const LogitTensor pivot = random_logits(rng, b, l, dp, cfg.logit_scale);
  const LogitTensor source = random_logits(rng, b, l, ds, cfg.logit_scale);
  const SparsifyMode mode = cfg.mode;
  Problem p;
  p.x = to_vector(pivot.data());
  p.loss = [pivot, source, k, mode](const std::vector<double>& x) {
    return gld_source_loss(with_data(pivot, x), source, k, mode).loss;
  };
  p.grad = to_vector(gld_source_loss(pivot, source, k, mode).grad.data());
  for (std::size_t bb = 0; bb < b; ++bb) {
    // top-k boundary of every pivot row
    if (k < dp) {
      for (std::size_t t = 0; t < l; ++t) {
        const auto sorted = sort_descending(pivot.row(bb, t)).sorted;
        p.margin = std::min(p.margin, sorted[k - 1] - sorted[k]);
      }
    }
    const SparseSelection psel = sparsify(pivot, bb, k, mode);
    const NodeFeatures pf = degree_features(build_graph(psel));
    const NodeFeatures sf = degree_features(build_graph(sparsify(source, bb, k, mode)));
    // |df(i)/dv_t(p)| <= (2/n) sum_j |v_t(j)|; feature gaps are divided by
    // that so every margin is in logit units
    double sens = 0.0;
    for (std::size_t t = 0; t < l; ++t) {
      double row = 0.0;
      for (double v : psel.values.row(t)) row += std::abs(v);
      sens = std::max(sens, 2.0 * row / static_cast<double>(psel.width()));
    }
    sens = std::max(sens, 1e-300);
    p.margin = std::min(p.margin, sorted_gap(pf.f) / sens);
    p.margin = std::min(p.margin, matched_gap(pf.f_sorted, sf.f_sorted) / sens);
  }
  return p;
}

Problem make_kl(Rng& rng, const GradcheckConfig& cfg) {
  const std::size_t d = rng.between(2, cfg.max_vocab);
  std::vector<double> pivot(d), source(d);
  for (double& x : pivot) x = cfg.logit_scale * rng.normal();
  for (double& x : source) x = cfg.logit_scale * rng.normal();
  Problem p;
  p.x = pivot;
  p.loss = [source](const std::vector<double>& x) { return kl_loss(x, source).loss; };
  p.grad = kl_loss(pivot, source).grad;
  return p;
}

Problem make_sft(Rng& rng, const GradcheckConfig& cfg) {
  const std::size_t b = rng.between(1, cfg.max_batch);
  const std::size_t l = rng.between(1, cfg.max_length);
  const std::size_t d = rng.between(2, cfg.max_vocab);
  const LogitTensor pivot = random_logits(rng, b, l, d, cfg.logit_scale);
  Targets targets;
  targets.batch = b;
  targets.length = l;
  for (std::size_t i = 0; i < b * l; ++i) {
    targets.ids.push_back(static_cast<std::int64_t>(rng.index(d)));
    targets.mask.push_back(i == 0 || rng.uniform() >= 0.2 ? 1 : 0);
  }
  Problem p;
  p.x = to_vector(pivot.data());
  p.loss = [pivot, targets](const std::vector<double>& x) {
    return sft_cross_entropy(with_data(pivot, x), targets).loss;
  };
  p.grad = to_vector(sft_cross_entropy(pivot, targets).grad.data());
  return p;
}

Problem make_vector_loss(Rng& rng, const GradcheckConfig& cfg, LossKind kind) {
  const std::size_t d = rng.between(2, cfg.max_vocab);
  std::vector<double> t(d), s(d);
  for (double& x : t) x = cfg.logit_scale * rng.normal();
  for (double& x : s) x = cfg.logit_scale * rng.normal();
  Problem p;
  p.x = s;
  p.loss = [t, kind](const std::vector<double>& x) { return evaluate_loss(kind, t, x, 1.0).loss; };
  p.grad = evaluate_loss(kind, t, s, 1.0).grad;
  if (kind == LossKind::W1Simplex) {
    // A logit step h moves q_i by at most 2 h q_i, so relative probability
    // gaps over 2 are in logit units.
    const auto ps = sort_descending(softmax(t)).sorted;
    const auto qs = sort_descending(softmax(s)).sorted;
    for (std::size_t i = 0; i < d; ++i) {
      p.margin = std::min(p.margin, std::abs(ps[i] - qs[i]) / (2.0 * qs[i]));
      if (i > 0) p.margin = std::min(p.margin, (qs[i - 1] - qs[i]) / (2.0 * qs[i - 1]));
    }
  }
  return p;
}

Problem make_problem(CheckedLoss loss, Rng& rng, const GradcheckConfig& cfg) {
  switch (loss) {
    case CheckedLoss::Uld: return make_uld(rng, cfg);
    case CheckedLoss::Gld: return make_gld(rng, cfg);
    case CheckedLoss::Kl: return make_kl(rng, cfg);
    case CheckedLoss::Sft: return make_sft(rng, cfg);
    case CheckedLoss::GwAppendix: return make_vector_loss(rng, cfg, LossKind::GwAppendix);
    case CheckedLoss::W1Simplex: return make_vector_loss(rng, cfg, LossKind::W1Simplex);
  }
  throw ParameterError("unknown loss");
}

std::vector<double> central_difference(const Problem& p, double h) {
  std::vector<double> out(p.x.size());
  std::vector<double> x = p.x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = p.x[i] + h;
    const double up = p.loss(x);
    x[i] = p.x[i] - h;
    const double down = p.loss(x);
    x[i] = p.x[i];
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& cfg, std::uint64_t seed, std::size_t threads) {
  if (cfg.max_batch == 0 || cfg.max_length == 0 || cfg.max_vocab < 2 || cfg.max_k == 0) {
    throw ParameterError("gradcheck dims need batch, length, k >= 1 and vocab >= 2");
  }
  if (!(cfg.h > 0.0)) throw ParameterError("gradcheck step h must be positive");
  GradcheckReport report;
  std::size_t offset = 0;
  for (CheckedLoss loss : kCheckedLosses) {
    const std::uint64_t base = seed + 1000003ULL * offset++;
    std::vector<GradcheckRow> rows(cfg.instances);
    parallel_for(cfg.instances, threads, [&](std::size_t i) {
      GradcheckRow& row = rows[i];
      row.loss = loss;
      row.instance = i;
      row.seed = base + i;
      Rng rng(row.seed);
      Problem p = make_problem(loss, rng, cfg);
      row.coords = p.x.size();
      row.margin = p.margin;
      if (p.margin < cfg.tie_gap) {
        row.excluded = true;
        return;
      }
      if (cfg.corrupt_gradient) p.grad[0] += 0.1 * std::max(1.0, l2_norm(p.grad));
      row.rel_err = relative_error(p.grad, central_difference(p, cfg.h));
      row.pass = row.rel_err <= cfg.threshold;
    });
    GradcheckSummary sum;
    sum.loss = loss;
    for (const auto& row : rows) {
      if (row.excluded) {
        ++sum.excluded;
        continue;
      }
      ++sum.checked;
      if (!row.pass) ++sum.failures;
      sum.max_rel_err = std::max(sum.max_rel_err, row.rel_err);
    }
    report.summaries.push_back(sum);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  return report;
}

std::string gradcheck_csv(const GradcheckReport& report) {
  std::string out = "loss,instance,seed,coords,excluded,margin,rel_err,pass\n";
  for (const auto& r : report.rows) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(r.loss), r.instance, r.seed,
                       r.coords, r.excluded ? 1 : 0, r.margin, r.rel_err, r.pass ? 1 : 0);
  }
  return out;
}

}  // namespace gld

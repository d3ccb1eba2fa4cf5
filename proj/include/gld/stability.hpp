// SPDX-License-Identifier: Apache-2.0
//
// Lipschitz and stability experiments around the three distillation losses
// and the sorted matching. Logits here are single vectors of length D, the
// teacher T fixed and the student S differentiated.
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gld/graph.hpp"
#include "gld/tensor.hpp"

namespace gld {

enum class LossKind { GwAppendix, W1Simplex, KlSoftmax };

LossKind parse_loss_kind(std::string_view text);
const char* to_string(LossKind kind);

struct VectorLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d S
};

constexpr double kNoClip = std::numeric_limits<double>::infinity();

/// lambda * sum_{i,j,k,l} (C_T(i,j) - C_S(k,l))^2 P(i,k) P(j,l) with
/// C_X(k,l) = (X_k - X_l)^2 and P = I / D, i.e. lambda / D^2 times the summed
/// squared distortion sum_{k,l} (C_T(k,l) - C_S(k,l))^2. Evaluated from sums of
/// centred powers in O(D). Entries are clipped to [-r, r]; clipped student
/// coordinates get zero gradient. ParameterError when D < 2.
VectorLoss gw_appendix_loss(std::span<const double> t, std::span<const double> s, double lambda,
                            double r = kNoClip);

/// lambda * sum_i |softmax(T) sorted - softmax(S) sorted|. ParameterError when D < 1.
VectorLoss w1_simplex_loss(std::span<const double> t, std::span<const double> s, double lambda,
                           double r = kNoClip);

/// lambda * KL(softmax(T) || softmax(S)).
VectorLoss kl_softmax_loss(std::span<const double> t, std::span<const double> s, double lambda,
                           double r = kNoClip);

VectorLoss evaluate_loss(LossKind kind, std::span<const double> t, std::span<const double> s,
                         double lambda, double r = kNoClip);

double gw_coordinate_bound(std::size_t d, double r, double lambda);  // 64 lambda R^3 / D
double w1_norm_bound(std::size_t d, double lambda);                  // lambda sqrt(D) / 2
double kl_norm_bound(std::size_t d, double r, double lambda);        // lambda e^R D
double theoretical_bound(LossKind kind, std::size_t d, double r, double lambda);

struct LipschitzRecord {
  LossKind loss_kind = LossKind::GwAppendix;
  std::size_t d = 0;
  double r = 0.0;
  double lambda = 1.0;
  double empirical_max_grad_norm = 0.0;
  double empirical_max_grad_coord = 0.0;
  double theoretical_bound = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  /// The lemma's quantity against its constant: largest coordinate for the
  /// GW loss, gradient norm otherwise.
  double bounded_quantity() const;
  bool bound_holds(double slack = 1e-9) const {
    return bounded_quantity() <= theoretical_bound + slack;
  }
};

/// Draws `samples` pairs (T, S) uniform in [-R, R]^D, sample i from seed + i,
/// and records the largest gradient norm and coordinate. ParameterError when
/// samples = 0.
LipschitzRecord estimate_lipschitz(LossKind kind, std::size_t d, double r, double lambda,
                                   std::size_t samples, std::uint64_t seed,
                                   std::size_t threads = 1);

struct StabilityRecord {
  std::size_t n = 0;
  double perturbation_spectral_norm = 0.0;
  double feature_delta_norm = 0.0;
  double lipschitz_bound = 0.0;  // perturbation_spectral_norm / sqrt(n)

  bool holds(double slack = 1e-12) const { return feature_delta_norm <= lipschitz_bound + slack; }
};

/// ||F(C) - F(C + E)||_2 against ||E||_2 / sqrt(n) for F = row means.
/// ShapeError unless C and E are square and the same size.
StabilityRecord feature_stability_check(const Matrix& c, const Matrix& e);

struct SortStability {
  bool condition = false;  // perturbation_max < min_gap / 2
  double min_gap = 0.0;    // 0 when entries repeat
  std::size_t samples = 0;
  std::size_t permutation_changes = 0;
};

/// When the min-gap condition holds, samples perturbations uniform in
/// [-pmax, pmax]^n and counts how often the descending argsort changes.
SortStability sort_stability_check(std::span<const double> v, double perturbation_max,
                                   std::size_t samples = 10000, std::uint64_t seed = 0);

struct SweepConfig {
  std::size_t pairs = 64;
  std::size_t batch = 1;
  std::size_t length = 8;
  std::size_t vocab = 32;
  std::size_t top_k = 8;
  std::size_t steps = 50;
  double lr = 0.5;
  double scale = 2.0;  // logits are scale * N(0, 1)
  std::size_t bins = 20;
  SparsifyMode mode = SparsifyMode::Mask;
};

struct HistogramRow {
  std::string phase;      // before | after
  std::string loss_kind;  // uld | gld
  double bin_lo = 0.0;
  double bin_hi = 0.0;
  std::size_t count = 0;
};

struct SweepReport {
  std::vector<double> uld_before, uld_after, gld_before, gld_after;
  std::vector<HistogramRow> histogram;

  double mean_uld_before() const;
  double mean_uld_after() const;
  double mean_gld_before() const;
  double mean_gld_after() const;
};

/// Random pivot/source pairs scored by ULD and GLD, then `steps` plain
/// gradient steps on the pivot minimizing ULD alone, then scored again.
/// Histogram bins span the pooled before/after range of each loss.
SweepReport wd_gwd_distribution_sweep(const SweepConfig& cfg, std::uint64_t seed,
                                      std::size_t threads = 1);

std::string histogram_csv(const SweepReport& report);

}  // namespace gld

// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks of every analytic gradient in the library.
// The piecewise-linear losses have kinks where sort orders or top-k sets
// change; an instance whose inputs sit within `tie_gap` of one is excluded
// and logged rather than compared. Away from kinks these losses are smooth or
// piecewise linear, so a margin of a few h is enough.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gld/graph.hpp"

namespace gld {

enum class CheckedLoss { Uld, Gld, Kl, Sft, GwAppendix, W1Simplex };

inline constexpr CheckedLoss kCheckedLosses[] = {CheckedLoss::Uld,        CheckedLoss::Gld,
                                                 CheckedLoss::Kl,         CheckedLoss::Sft,
                                                 CheckedLoss::GwAppendix, CheckedLoss::W1Simplex};

const char* to_string(CheckedLoss loss);

struct GradcheckConfig {
  std::size_t instances = 100;  // per loss
  std::size_t max_batch = 2;
  std::size_t max_length = 8;
  std::size_t max_vocab = 32;
  std::size_t max_k = 8;
  double h = 1e-6;
  double threshold = 1e-4;  // relative error
  double tie_gap = 1e-5;    // kink distance, in logit units, below which an instance is excluded
  double logit_scale = 2.0;
  SparsifyMode mode = SparsifyMode::Mask;
  bool corrupt_gradient = false;  // negative control: perturbs the analytic gradient
};

struct GradcheckRow {
  CheckedLoss loss = CheckedLoss::Uld;
  std::size_t instance = 0;
  std::uint64_t seed = 0;
  std::size_t coords = 0;
  bool excluded = false;
  double margin = 0.0;  // smallest kink margin seen
  double rel_err = 0.0;
  bool pass = true;
};

struct GradcheckSummary {
  CheckedLoss loss = CheckedLoss::Uld;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;

  double excluded_fraction() const;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  std::vector<GradcheckSummary> summaries;

  bool all_pass() const;
};

/// ||a - b||_2 / max(||a||_2, ||b||_2, 1e-8).
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

/// Instance i of loss l is drawn from seed + 1000003 * l + i.
GradcheckReport run_gradcheck(const GradcheckConfig& cfg, std::uint64_t seed,
                              std::size_t threads = 1);

std::string gradcheck_csv(const GradcheckReport& report);

}  // namespace gld

// SPDX-License-Identifier: Apache-2.0
//
// Forward and analytic backward passes for the fusion objective
//
//   total = lambda_gld * sum_s GLD_s + lambda_uld * sum_s ULD_s + lambda_sft * SFT
//
// ULD is the sorted-logit Wasserstein-1 surrogate applied per position, GLD the
// sorted degree-feature matching between co-activation graphs. Gradients are
// with respect to the pivot logits only; source logits are constants.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "gld/graph.hpp"
#include "gld/tensor.hpp"

namespace gld {

struct LossConfig {
  double lambda_gld = 0.001;
  double lambda_uld = 0.5;
  double lambda_sft = 1.0;
  std::size_t top_k = kDefaultTopK;
  SparsifyMode sparsify_mode = SparsifyMode::Mask;
  DType dtype = DType::Float64;  // dtype of the returned gradient

  /// ParameterError on negative weights or top_k = 0.
  void validate() const;
};

/// Strict parse: unknown keys and wrong types are FormatError, bad values
/// ParameterError. Missing keys keep their defaults.
LossConfig parse_loss_config(const nlohmann::json& doc);
nlohmann::json to_json(const LossConfig& cfg);

struct RowLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

struct BatchLoss {
  double loss = 0.0;
  LogitTensor grad;  // pivot-shaped
};

/// Sorted W1 between two logit rows. The shorter row is zero-padded.
RowLoss uld_loss(std::span<const double> pivot, std::span<const double> source);

/// uld_loss averaged over all B*L positions of one source.
BatchLoss uld_batch_loss(const LogitTensor& pivot, const LogitTensor& source);

/// Sorted matching of degree features, truncated to the shorter vector.
/// `grad` is with respect to the pivot features, in their original order.
RowLoss gld_pairwise(const NodeFeatures& source, const NodeFeatures& pivot);

/// GLD term for one source, averaged over the batch.
BatchLoss gld_source_loss(const LogitTensor& pivot, const LogitTensor& source, std::size_t k,
                          SparsifyMode mode);

/// Sum of per-source GLD terms, accumulated in source order.
BatchLoss gld_loss(const LogitTensor& pivot, std::span<const LogitTensor> sources,
                   const LossConfig& cfg);

/// KL(softmax(source) || softmax(pivot)); gradient w.r.t. pivot logits.
RowLoss kl_loss(std::span<const double> pivot, std::span<const double> source);

/// Next-token targets for the supervised term. Masked positions carry no loss.
struct Targets {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int64_t> ids;
  std::vector<std::uint8_t> mask;  // 1 = position contributes

  /// From a rank-2 [B, L] tensor of integer ids; a negative id masks the position.
  static Targets from_tensor(const Tensor& tensor);
  Tensor to_tensor() const;
};

/// Mean token cross-entropy over unmasked positions.
BatchLoss sft_cross_entropy(const LogitTensor& pivot, const Targets& targets);

struct SourceLoss {
  std::size_t source_id = 0;
  double uld = 0.0;
  double gld = 0.0;
};

struct LossReport {
  double total = 0.0;
  double sft = 0.0;
  std::vector<SourceLoss> per_source;
};

struct FusionLoss {
  LossReport report;
  LogitTensor grad;
};

/// Full objective. Without targets the supervised term is zero.
FusionLoss infigfusion_loss(const LogitTensor& pivot, std::span<const LogitTensor> sources,
                            const std::optional<Targets>& targets, const LossConfig& cfg);

nlohmann::json to_json(const LossReport& report);

}  // namespace gld

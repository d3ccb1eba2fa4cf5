// SPDX-License-Identifier: Apache-2.0
#include "gld/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gld/errors.hpp"

namespace gld {

namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

void check_batch_shape(const LogitTensor& pivot, const LogitTensor& other, const char* what) {
  if (other.batch() != pivot.batch() || other.length() != pivot.length()) {
    throw ShapeError(std::string(what) + " shape [" + std::to_string(other.batch()) + "," +
                     std::to_string(other.length()) + ",*] does not match pivot [" +
                     std::to_string(pivot.batch()) + "," + std::to_string(pivot.length()) + ",*]");
  }
}

void accumulate(LogitTensor& into, const LogitTensor& from, double weight) {
  auto dst = into.data();
  auto src = from.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * src[i];
}

LogitTensor zeros_like(const LogitTensor& z) {
  return LogitTensor(z.batch(), z.length(), z.vocab(), DType::Float64);
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda_gld >= 0.0) || !(lambda_uld >= 0.0) || !(lambda_sft >= 0.0)) {
    throw ParameterError("loss weights must be non-negative");
  }
  if (top_k == 0) throw ParameterError("top_k must be >= 1");
}

LossConfig parse_loss_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw FormatError("loss config must be a JSON object");
  LossConfig cfg;
  auto number = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) throw FormatError("config key '" + key + "' must be a number");
    return v.get<double>();
  };
  auto text = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_string()) throw FormatError("config key '" + key + "' must be a string");
    return v.get<std::string>();
  };
  for (const auto& [key, value] : doc.items()) {
    if (key == "lambda_gld") {
      cfg.lambda_gld = number(value, key);
    } else if (key == "lambda_uld") {
      cfg.lambda_uld = number(value, key);
    } else if (key == "lambda_sft") {
      cfg.lambda_sft = number(value, key);
    } else if (key == "top_k") {
      if (!value.is_number_integer()) throw FormatError("config key 'top_k' must be an integer");
      if (value.get<std::int64_t>() < 1) throw ParameterError("top_k must be >= 1");
      cfg.top_k = value.get<std::size_t>();
    } else if (key == "sparsify_mode") {
      cfg.sparsify_mode = parse_sparsify_mode(text(value, key));
    } else if (key == "dtype") {
      const std::string d = text(value, key);
      if (d == "float64") {
        cfg.dtype = DType::Float64;
      } else if (d == "float32") {
        cfg.dtype = DType::Float32;
      } else {
        throw ParameterError("dtype must be float32 or float64, got '" + d + "'");
      }
    } else {
      throw FormatError("unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const LossConfig& cfg) {
  return nlohmann::json{{"lambda_gld", cfg.lambda_gld},
                        {"lambda_uld", cfg.lambda_uld},
                        {"lambda_sft", cfg.lambda_sft},
                        {"top_k", cfg.top_k},
                        {"sparsify_mode", to_string(cfg.sparsify_mode)},
                        {"dtype", dtype_name(cfg.dtype)}};
}

// ---------------------------------------------------------------------------
// ULD

RowLoss uld_loss(std::span<const double> pivot, std::span<const double> source) {
  if (pivot.empty() || source.empty()) throw ParameterError("uld_loss needs non-empty rows");
  const std::size_t n = std::max(pivot.size(), source.size());
  std::vector<double> p(n, 0.0), s(n, 0.0);
  std::copy(pivot.begin(), pivot.end(), p.begin());
  std::copy(source.begin(), source.end(), s.begin());
  const SortResult ps = sort_descending(p);
  const SortResult ss = sort_descending(s);

  RowLoss out;
  out.grad.assign(pivot.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = ps.sorted[i] - ss.sorted[i];
    out.loss += std::abs(diff);
    // padded slots are not parameters
    if (ps.perm[i] < pivot.size()) out.grad[ps.perm[i]] = sign(diff);
  }
  return out;
}

BatchLoss uld_batch_loss(const LogitTensor& pivot, const LogitTensor& source) {
  check_batch_shape(pivot, source, "source");
  BatchLoss out{0.0, zeros_like(pivot)};
  const std::size_t positions = pivot.batch() * pivot.length();
  if (positions == 0) return out;
  const double scale = 1.0 / static_cast<double>(positions);
  double total = 0.0;
  for (std::size_t b = 0; b < pivot.batch(); ++b) {
    for (std::size_t t = 0; t < pivot.length(); ++t) {
      const RowLoss row = uld_loss(pivot.row(b, t), source.row(b, t));
      total += row.loss;
      auto g = out.grad.row(b, t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = row.grad[i] * scale;
    }
  }
  out.loss = total / static_cast<double>(positions);
  return out;
}

// ---------------------------------------------------------------------------
// GLD

RowLoss gld_pairwise(const NodeFeatures& source, const NodeFeatures& pivot) {
  if (source.size() == 0 || pivot.size() == 0) {
    throw ParameterError("gld_pairwise needs non-empty feature vectors");
  }
  const std::size_t k = std::min(source.size(), pivot.size());
  RowLoss out;
  out.grad.assign(pivot.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double diff = source.f_sorted[i] - pivot.f_sorted[i];
    out.loss += std::abs(diff);
    out.grad[pivot.perm[i]] = -sign(diff);
  }
  return out;
}

BatchLoss gld_source_loss(const LogitTensor& pivot, const LogitTensor& source, std::size_t k,
                          SparsifyMode mode) {
  check_batch_shape(pivot, source, "source");
  BatchLoss out{0.0, zeros_like(pivot)};
  if (pivot.batch() == 0) return out;
  const double batch_scale = 1.0 / static_cast<double>(pivot.batch());
  double total = 0.0;

  for (std::size_t b = 0; b < pivot.batch(); ++b) {
    const SparseSelection psel = sparsify(pivot, b, k, mode);
    const SparseSelection ssel = sparsify(source, b, k, mode);
    const NodeFeatures pf = degree_features(build_graph(psel));
    const NodeFeatures sf = degree_features(build_graph(ssel));
    const RowLoss pair = gld_pairwise(sf, pf);
    total += pair.loss;

    // f(i) = (1/n) sum_j C(i,j), C(i,j) = sum_t v_t(i) v_t(j), so
    // dL/dv_t(p) = g(p)/n * sum_j v_t(j) + (1/n) sum_i g(i) v_t(i).
    const std::size_t n = psel.width();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < pivot.length(); ++t) {
      const auto v = psel.values.row(t);
      double row_sum = 0.0;
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row_sum += v[j];
        weighted += pair.grad[j] * v[j];
      }
      weighted *= inv_n;
      for (std::size_t p = 0; p < n; ++p) {
        if (mode == SparsifyMode::Mask && !psel.is_selected(t, p)) continue;
        const double g = pair.grad[p] * inv_n * row_sum + weighted;
        out.grad(b, t, psel.indices[p]) += g * batch_scale;
      }
    }
  }
  out.loss = total / static_cast<double>(pivot.batch());
  return out;
}

BatchLoss gld_loss(const LogitTensor& pivot, std::span<const LogitTensor> sources,
                   const LossConfig& cfg) {
  cfg.validate();
  for (const auto& s : sources) check_batch_shape(pivot, s, "source");
  BatchLoss out{0.0, zeros_like(pivot)};
  for (const auto& s : sources) {
    const BatchLoss term = gld_source_loss(pivot, s, cfg.top_k, cfg.sparsify_mode);
    out.loss += term.loss;
    accumulate(out.grad, term.grad, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// KL and cross-entropy

RowLoss kl_loss(std::span<const double> pivot, std::span<const double> source) {
  if (pivot.size() != source.size()) {
    throw ShapeError("kl_loss needs equal vocabularies, got " + std::to_string(pivot.size()) +
                     " and " + std::to_string(source.size()));
  }
  const auto log_p = log_softmax(source);
  const auto log_q = log_softmax(pivot);
  RowLoss out;
  out.grad.resize(pivot.size());
  for (std::size_t i = 0; i < pivot.size(); ++i) {
    const double p = std::exp(log_p[i]);
    out.loss += p * (log_p[i] - log_q[i]);
    out.grad[i] = std::exp(log_q[i]) - p;
  }
  // Rounding can leave a tiny negative value for nearly equal rows.
  out.loss = std::max(out.loss, 0.0);
  return out;
}

Targets Targets::from_tensor(const Tensor& tensor) {
  if (tensor.rank() != 2) {
    throw ShapeError("targets must be a rank-2 [B, L] tensor, got rank " +
                     std::to_string(tensor.rank()));
  }
  Targets out;
  out.batch = tensor.shape()[0];
  out.length = tensor.shape()[1];
  out.ids.resize(tensor.size());
  out.mask.resize(tensor.size());
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    const double x = tensor.data()[i];
    if (x != std::floor(x)) throw ValidationError("target ids must be integers");
    out.ids[i] = x < 0.0 ? -1 : static_cast<std::int64_t>(x);
    out.mask[i] = x < 0.0 ? 0 : 1;
  }
  return out;
}

Tensor Targets::to_tensor() const {
  std::vector<double> data(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    data[i] = mask[i] ? static_cast<double>(ids[i]) : -1.0;
  }
  return Tensor({batch, length}, DType::Float64, std::move(data));
}

BatchLoss sft_cross_entropy(const LogitTensor& pivot, const Targets& targets) {
  if (targets.batch != pivot.batch() || targets.length != pivot.length()) {
    throw ShapeError("targets shape does not match pivot [B, L]");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < targets.ids.size(); ++i) {
    if (!targets.mask[i]) continue;
    if (targets.ids[i] < 0 || static_cast<std::size_t>(targets.ids[i]) >= pivot.vocab()) {
      throw ValidationError("target id " + std::to_string(targets.ids[i]) +
                            " out of range for vocab " + std::to_string(pivot.vocab()));
    }
    ++count;
  }
  if (count == 0) throw ParameterError("sft_cross_entropy: every position is masked");

  BatchLoss out{0.0, zeros_like(pivot)};
  const double scale = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t b = 0; b < pivot.batch(); ++b) {
    for (std::size_t t = 0; t < pivot.length(); ++t) {
      const std::size_t flat = b * pivot.length() + t;
      if (!targets.mask[flat]) continue;
      const auto target = static_cast<std::size_t>(targets.ids[flat]);
      const auto logp = log_softmax(pivot.row(b, t));
      total += -logp[target];
      auto g = out.grad.row(b, t);
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = (std::exp(logp[i]) - (i == target ? 1.0 : 0.0)) * scale;
      }
    }
  }
  out.loss = total / static_cast<double>(count);
  return out;
}

// ---------------------------------------------------------------------------

FusionLoss infigfusion_loss(const LogitTensor& pivot, std::span<const LogitTensor> sources,
                            const std::optional<Targets>& targets, const LossConfig& cfg) {
  cfg.validate();
  for (const auto& s : sources) check_batch_shape(pivot, s, "source");

  LogitTensor grad = zeros_like(pivot);
  LossReport report;
  double uld_sum = 0.0;
  double gld_sum = 0.0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const BatchLoss uld = uld_batch_loss(pivot, sources[s]);
    const BatchLoss gld = gld_source_loss(pivot, sources[s], cfg.top_k, cfg.sparsify_mode);
    report.per_source.push_back({s, uld.loss, gld.loss});
    uld_sum += uld.loss;
    gld_sum += gld.loss;
    accumulate(grad, gld.grad, cfg.lambda_gld);
    accumulate(grad, uld.grad, cfg.lambda_uld);
  }
  if (targets) {
    const BatchLoss sft = sft_cross_entropy(pivot, *targets);
    report.sft = sft.loss;
    accumulate(grad, sft.grad, cfg.lambda_sft);
  }
  report.total = cfg.lambda_gld * gld_sum + cfg.lambda_uld * uld_sum + cfg.lambda_sft * report.sft;

  std::vector<double> data(grad.data().begin(), grad.data().end());
  return {report, LogitTensor(pivot.batch(), pivot.length(), pivot.vocab(), cfg.dtype,
                              std::move(data))};
}

nlohmann::json to_json(const LossReport& report) {
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : report.per_source) {
    sources.push_back({{"source_id", s.source_id}, {"uld", s.uld}, {"gld", s.gld}});
  }
  return {{"total", report.total}, {"sft", report.sft}, {"per_source", sources}};
}

}  // namespace gld

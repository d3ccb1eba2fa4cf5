// SPDX-License-Identifier: Apache-2.0
#include "gld/graph.hpp"

#include <algorithm>
#include <string>

#include "gld/errors.hpp"

namespace gld {

SparsifyMode parse_sparsify_mode(std::string_view text) {
  if (text == "mask") return SparsifyMode::Mask;
  if (text == "gather") return SparsifyMode::Gather;
  throw ParameterError("unknown sparsify mode '" + std::string(text) + "'");
}

Normalization parse_normalization(std::string_view text) {
  if (text == "raw") return Normalization::Raw;
  if (text == "row_stochastic") return Normalization::RowStochastic;
  throw ParameterError("unknown normalization '" + std::string(text) + "'");
}

const char* to_string(SparsifyMode mode) { return mode == SparsifyMode::Mask ? "mask" : "gather"; }

const char* to_string(Normalization normalization) {
  return normalization == Normalization::Raw ? "raw" : "row_stochastic";
}

SparseSelection sparsify(const LogitTensor& z, std::size_t sample, std::size_t k,
                         SparsifyMode mode) {
  if (k == 0) throw ParameterError("sparsify requires k >= 1");
  if (sample >= z.batch()) {
    throw ParameterError("sample " + std::to_string(sample) + " out of range for batch " +
                         std::to_string(z.batch()));
  }
  const std::size_t length = z.length();
  const std::size_t vocab = z.vocab();

  // membership[t * vocab + i] marks i in position t's own top-k
  std::vector<std::uint8_t> membership(length * vocab, 0);
  std::vector<std::uint8_t> in_union(vocab, 0);
  for (std::size_t t = 0; t < length; ++t) {
    if (vocab == 0) break;
    const TopK top = topk_per_position(z.row(sample, t), k);
    for (std::size_t i : top.indices) {
      membership[t * vocab + i] = 1;
      in_union[i] = 1;
    }
  }

  SparseSelection sel;
  sel.mode = mode;
  sel.vocab = vocab;
  for (std::size_t i = 0; i < vocab; ++i)
    if (in_union[i]) sel.indices.push_back(i);

  const std::size_t width = sel.indices.size();
  sel.values = Matrix(length, width);
  sel.selected.assign(length * width, 0);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t id = sel.indices[j];
      const bool own = membership[t * vocab + id] != 0;
      sel.selected[t * width + j] = own ? 1 : 0;
      if (own || mode == SparsifyMode::Gather) sel.values(t, j) = z(sample, t, id);
    }
  }
  return sel;
}

CoActivationGraph build_graph(const SparseSelection& selection, Normalization normalization) {
  const std::size_t n = selection.width();
  if (n == 0) throw EmptySelectionError("selection has no vocabulary dimensions");

  CoActivationGraph g;
  g.node_ids = selection.indices;
  g.normalization = normalization;
  g.c = gram_matrix(selection.values);
  if (normalization == Normalization::Raw) return g;

  for (std::size_t i = 0; i < n; ++i) {
    auto row = g.c.row(i);
    for (double& x : row) x = std::max(x, 0.0);
    const double total = exact_sum(row);
    if (total == 0.0) {
      std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(n));
    } else {
      for (double& x : row) x /= total;
    }
  }
  return g;
}

std::vector<double> row_means(const Matrix& c) {
  if (!c.square()) throw ShapeError("row_means needs a square matrix");
  std::vector<double> f(c.rows());
  const double n = static_cast<double>(c.cols());
  for (std::size_t i = 0; i < c.rows(); ++i) f[i] = exact_sum(c.row(i)) / n;
  return f;
}

NodeFeatures make_features(std::vector<double> f) {
  NodeFeatures out;
  SortResult s = sort_descending(f);
  out.f = std::move(f);
  out.f_sorted = std::move(s.sorted);
  out.perm = std::move(s.perm);
  return out;
}

std::vector<double> factored_row_means(const Matrix& z) {
  const std::size_t n = z.cols();
  if (n == 0) throw ShapeError("factored_row_means needs at least one column");
  std::vector<double> f(n, 0.0);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    const auto v = z.row(t);
    double total = 0.0;
    for (double x : v) total += x;
    for (std::size_t i = 0; i < n; ++i) f[i] += v[i] * total;
  }
  for (double& x : f) x /= static_cast<double>(n);
  return f;
}

NodeFeatures degree_features(const CoActivationGraph& graph) {
  if (graph.normalization == Normalization::RowStochastic) {
    // Rows sum to one by construction; the mean is 1/d' with no rounding noise.
    const std::size_t n = graph.size();
    return make_features(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }
  return make_features(row_means(graph.c));
}

}  // namespace gld

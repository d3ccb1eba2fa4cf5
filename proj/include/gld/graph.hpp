// SPDX-License-Identifier: Apache-2.0
//
// Per-sample top-k sparsification and co-activation graph construction.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "gld/tensor.hpp"

namespace gld {

/// How values outside a position's own top-k are treated at union dimensions.
enum class SparsifyMode {
  Mask,    // zeroed
  Gather,  // kept
};

enum class Normalization { Raw, RowStochastic };

SparsifyMode parse_sparsify_mode(std::string_view text);
Normalization parse_normalization(std::string_view text);
const char* to_string(SparsifyMode mode);
const char* to_string(Normalization normalization);

inline constexpr std::size_t kDefaultTopK = 10;

struct SparseSelection {
  std::vector<std::size_t> indices;   // strictly increasing vocab ids, length d'
  Matrix values;                      // L x d'
  std::vector<std::uint8_t> selected; // L x d'; 1 where indices[j] is in position t's top-k
  SparsifyMode mode = SparsifyMode::Mask;
  std::size_t vocab = 0;              // d of the source tensor

  std::size_t width() const { return indices.size(); }
  bool is_selected(std::size_t t, std::size_t j) const { return selected[t * width() + j] != 0; }
};

struct CoActivationGraph {
  Matrix c;
  Normalization normalization = Normalization::Raw;
  std::vector<std::size_t> node_ids;

  std::size_t size() const { return node_ids.size(); }
};

struct NodeFeatures {
  std::vector<double> f;
  std::vector<double> f_sorted;
  std::vector<std::size_t> perm;

  std::size_t size() const { return f.size(); }
};

/// Union of the per-position top-k sets of one sample, with the retained
/// values. ParameterError on k = 0 or an out-of-range sample.
SparseSelection sparsify(const LogitTensor& z, std::size_t sample, std::size_t k,
                         SparsifyMode mode = SparsifyMode::Mask);

/// C = values^T values. RowStochastic clamps negatives to zero and divides
/// each row by its sum; an all-zero row becomes uniform.
CoActivationGraph build_graph(const SparseSelection& selection,
                              Normalization normalization = Normalization::Raw);

/// Row means of C with their stable descending sort.
NodeFeatures degree_features(const CoActivationGraph& graph);

/// Row means of an arbitrary square matrix. Row sums are correctly rounded,
/// so the result is independent of the column order.
std::vector<double> row_means(const Matrix& c);

NodeFeatures make_features(std::vector<double> f);

/// Raw degree features straight from the L x n values, never forming C:
/// f(i) = (1/n) sum_t z_t(i) sum_j z_t(j). O(L n). Agrees with
/// row_means(gram_matrix(z)) up to rounding.
std::vector<double> factored_row_means(const Matrix& z);

}  // namespace gld

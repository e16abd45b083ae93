#pragma once

// Transductive label propagation over a k-nearest-neighbour similarity graph.
//
// Edge weights are exp(cosine similarity), sparsified to the k largest per
// row, symmetrized as (A + A^T) / 2 and normalized to D^{-1/2} A D^{-1/2}.
// Scores solve (I - alpha W) Z = Y, where Y holds one-hot rows for seeded
// nodes and zero rows elsewhere. The normalization keeps the spectral radius
// of alpha W below one so the system is well posed.

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mesh/linalg.hpp"

namespace mesh {

/// Seed class for a node, or kUnseeded.
inline constexpr int kUnseeded = -1;

struct PropagationGraph {
  Matrix features;
  Matrix w_norm;
  Matrix seed_labels;
  // Node indices of seeded and unseeded rows, each in increasing order.
  std::vector<std::size_t> seeded_rows;
  std::vector<std::size_t> unseeded_rows;

  std::size_t num_nodes() const { return static_cast<std::size_t>(features.rows()); }
};

struct PropagationResult {
  Matrix z;
  // Indexed by node. Seeded nodes keep their seed class; unseeded nodes get
  // the row argmax of z.
  std::vector<int> labels;
  // max / sum of each row of z, zero for rows whose sum is <= 1e-12.
  std::vector<double> confidence;
};

/// Raw exp(cosine) affinities with a zeroed diagonal, before sparsification.
Matrix similarity_weights(const Matrix& features);

/// seed_classes holds one entry per feature row: a class in [0, num_classes)
/// or kUnseeded. k_hat is clamped to n - 1 on graphs with fewer nodes.
PropagationGraph build_graph(const Matrix& features, std::span<const int> seed_classes,
                             int num_classes, int k_hat);

/// Closed-form propagation via a direct solve.
PropagationResult propagate(const PropagationGraph& graph, double alpha);

/// Z_{t+1} = alpha W Z_t + Y from Z_0 = Y; used to cross-check propagate.
Matrix propagate_iterative_oracle(const PropagationGraph& graph, double alpha, int iters);

/// Writes the nonzero upper-triangle edges and the score matrix as
/// tab-separated text.
void write_graph_dump(std::ostream& os, const PropagationGraph& graph,
                      const PropagationResult& result);

}  // namespace mesh

#include "mesh/propagation.hpp"

#include <cmath>
#include <ostream>
#include <string>

namespace mesh {

Matrix similarity_weights(const Matrix& features) {
  Matrix w = linalg::cosine_similarity_matrix(features).array().exp().matrix();
  w.diagonal().setZero();
  return w;
}

PropagationGraph build_graph(const Matrix& features, std::span<const int> seed_classes,
                             int num_classes, int k_hat) {
  const Eigen::Index n = features.rows();
  if (k_hat < 1) throw ParameterError("build_graph: k_hat must be >= 1");
  if (num_classes < 1) throw ParameterError("build_graph: num_classes must be >= 1");
  if (static_cast<Eigen::Index>(seed_classes.size()) != n) {
    throw ShapeError("build_graph: " + std::to_string(seed_classes.size()) + " seed entries for " +
                     std::to_string(n) + " nodes");
  }
  if (n < 2) throw ParameterError("build_graph: need at least two nodes");

  PropagationGraph g;
  g.features = features;
  const Matrix affinity = similarity_weights(features);
  const Matrix sparse = linalg::topk_sparsify_rows(affinity, std::min<Eigen::Index>(k_hat, n - 1));
  const Matrix symmetric = 0.5 * (sparse + sparse.transpose());
  g.w_norm = linalg::symmetric_normalize(symmetric);

  g.seed_labels = Matrix::Zero(n, num_classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = seed_classes[static_cast<std::size_t>(i)];
    if (c == kUnseeded) {
      g.unseeded_rows.push_back(static_cast<std::size_t>(i));
      continue;
    }
    if (c < 0 || c >= num_classes) {
      throw ParameterError("build_graph: seed class " + std::to_string(c) + " out of range");
    }
    g.seed_labels(i, c) = 1.0;
    g.seeded_rows.push_back(static_cast<std::size_t>(i));
  }
  return g;
}

PropagationResult propagate(const PropagationGraph& graph, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("propagate: alpha must lie in (0, 1)");
  const Eigen::Index n = graph.w_norm.rows();
  const Matrix system = Matrix::Identity(n, n) - alpha * graph.w_norm;

  PropagationResult out;
  try {
    out.z = linalg::solve_linear(system, graph.seed_labels);
  } catch (const SingularMatrixError& e) {
    throw PropagationError(std::string("propagate: ") + e.what());
  }

  const auto argmax = linalg::row_argmax(out.z);
  out.labels.resize(static_cast<std::size_t>(n));
  out.confidence.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = out.z.row(i);
    const double sum = row.sum();
    out.confidence[static_cast<std::size_t>(i)] = sum > 1e-12 ? row.maxCoeff() / sum : 0.0;
    out.labels[static_cast<std::size_t>(i)] = argmax[static_cast<std::size_t>(i)];
  }
  // Seeds are never overwritten by the propagated scores.
  for (std::size_t i : graph.seeded_rows) {
    Eigen::Index c;
    graph.seed_labels.row(static_cast<Eigen::Index>(i)).maxCoeff(&c);
    out.labels[i] = static_cast<int>(c);
  }
  return out;
}

Matrix propagate_iterative_oracle(const PropagationGraph& graph, double alpha, int iters) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ParameterError("propagate_iterative_oracle: alpha must lie in (0, 1)");
  }
  Matrix z = graph.seed_labels;
  for (int t = 0; t < iters; ++t) z = alpha * (graph.w_norm * z) + graph.seed_labels;
  return z;
}

void write_graph_dump(std::ostream& os, const PropagationGraph& graph,
                      const PropagationResult& result) {
  os.precision(17);
  os << "# edges\ti\tj\tweight\n";
  for (Eigen::Index i = 0; i < graph.w_norm.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < graph.w_norm.cols(); ++j) {
      if (graph.w_norm(i, j) != 0.0) os << "edge\t" << i << '\t' << j << '\t' << graph.w_norm(i, j) << '\n';
    }
  }
  os << "# scores\tnode\tseed\tlabel\tconfidence\tz...\n";
  for (Eigen::Index i = 0; i < result.z.rows(); ++i) {
    const auto node = static_cast<std::size_t>(i);
    const bool seeded = graph.seed_labels.row(i).sum() > 0.0;
    os << "z\t" << i << '\t' << (seeded ? 1 : 0) << '\t' << result.labels[node] << '\t'
       << result.confidence[node];
    for (Eigen::Index k = 0; k < result.z.cols(); ++k) os << '\t' << result.z(i, k);
    os << '\n';
  }
}

}  // namespace mesh

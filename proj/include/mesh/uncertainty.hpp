#pragma once

#include <cstdint>
#include <vector>

#include "mesh/model.hpp"

namespace mesh {

struct UncertaintyReport {
  Matrix mean_proba;
  // Predictive entropy of mean_proba, in nats.
  std::vector<double> entropy;
  std::vector<int> predicted_class;
};

/// One low-uncertainty sample per predicted class.
struct AugmentedSeeds {
  std::vector<std::size_t> indices;  // rows of the unlabeled batch
  std::vector<int> classes;

  std::size_t size() const { return indices.size(); }
};

/// MC-dropout predictive distribution and its entropy for each row.
UncertaintyReport estimate_uncertainty(const ModelParams& params, const Matrix& x_unlabeled,
                                       int passes, double dropout_rate, std::uint64_t seed);

/// For every class predicted at least once, the sample of minimum entropy
/// among those predicted as that class (ties to the lowest index). Classes
/// nobody predicts are skipped. Seeds are ordered by class.
AugmentedSeeds select_low_uncertainty(const UncertaintyReport& report, int num_classes);

}  // namespace mesh

#include "mesh/uncertainty.hpp"

#include <cmath>
#include <optional>

namespace mesh {

UncertaintyReport estimate_uncertainty(const ModelParams& params, const Matrix& x_unlabeled,
                                       int passes, double dropout_rate, std::uint64_t seed) {
  if (x_unlabeled.rows() == 0) throw ParameterError("estimate_uncertainty: empty batch");
  UncertaintyReport report;
  report.mean_proba = mc_dropout_predict(params, x_unlabeled, passes, dropout_rate, seed);
  report.predicted_class = linalg::row_argmax(report.mean_proba);
  report.entropy.reserve(static_cast<std::size_t>(x_unlabeled.rows()));
  for (Eigen::Index i = 0; i < report.mean_proba.rows(); ++i) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < report.mean_proba.cols(); ++k) {
      const double p = report.mean_proba(i, k);
      if (p > 0.0) h -= p * std::log(p);
    }
    report.entropy.push_back(std::max(h, 0.0));
  }
  return report;
}

AugmentedSeeds select_low_uncertainty(const UncertaintyReport& report, int num_classes) {
  if (report.entropy.empty()) throw ParameterError("select_low_uncertainty: empty report");
  std::vector<std::optional<std::size_t>> best(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < report.entropy.size(); ++i) {
    const int c = report.predicted_class[i];
    if (c < 0 || c >= num_classes) {
      throw ParameterError("select_low_uncertainty: predicted class out of range");
    }
    auto& slot = best[static_cast<std::size_t>(c)];
    if (!slot || report.entropy[i] < report.entropy[*slot]) slot = i;
  }
  AugmentedSeeds seeds;
  for (int c = 0; c < num_classes; ++c) {
    if (const auto& slot = best[static_cast<std::size_t>(c)]) {
      seeds.indices.push_back(*slot);
      seeds.classes.push_back(c);
    }
  }
  return seeds;
}

}  // namespace mesh

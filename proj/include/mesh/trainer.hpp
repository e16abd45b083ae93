#pragma once

// Source pretraining and source-free adaptation.
//
// Adaptation freezes the classifier and alternates, once per epoch, between
// (a) label propagation over bottleneck features, seeded by the labeled
// target rows plus the lowest-uncertainty unlabeled row of each predicted
// class, and (b) minibatch SGD on the labeled loss plus the regularizers
// (pseudo-label CE, entropy, VAT, class diversity) for encoder and bottleneck.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mesh/dataset.hpp"
#include "mesh/losses.hpp"
#include "mesh/model.hpp"
#include "mesh/propagation.hpp"
#include "mesh/uncertainty.hpp"

namespace mesh {

struct AdaptConfig {
  // Architecture; the input size and class count come from the data.
  std::vector<int> hidden = {64};
  int bottleneck_dim = 16;
  Activation activation = Activation::tanh;

  double lambda0 = 0.5;
  double alpha = 0.9;
  int k_hat = 10;
  double eps_smooth = 0.1;
  double eps_vat = 1.0;
  double vat_xi = 0.0;  // non-positive: 1e-6 * sqrt(input dim)
  int vat_power_iters = 1;

  double lr_encoder = 0.001;
  double lr_bottleneck = 0.01;
  double lr_classifier = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  int pretrain_epochs = 50;
  int epochs = 30;
  int steps_per_epoch = 0;  // 0: ceil(unlabeled / batch_size)
  int mc_passes = 10;
  double dropout_rate = 0.5;
  std::uint64_t seed = 2021;

  bool no_augmentation = false;
  bool no_ent = false;
  bool no_ps = false;
  bool no_vat = false;
  bool no_div = false;

  /// Throws ParameterError when a field is out of range.
  void validate() const;
};

/// Loss values of one optimization step.
struct StepLosses {
  double l_lab = 0.0;
  double l_ent = 0.0;
  double l_ps = 0.0;
  double l_vadv = 0.0;
  double l_div = 0.0;
  double l_reg = 0.0;
  double l_total = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  // Means over the epoch's steps.
  StepLosses losses;
  std::size_t num_seeds = 0;
  // Diagnostics supplied by an observer that knows the ground truth.
  std::optional<double> pseudo_label_accuracy;
  std::optional<double> seed_accuracy;
  std::optional<double> test_accuracy;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<StepLosses> steps;
  std::optional<double> final_accuracy;
};

/// Writes one tab-separated record per epoch with a fixed column order.
/// Missing diagnostics are written as NA.
void write_train_report(std::ostream& os, const TrainReport& report);

/// What adapt exposes after computing an epoch's pseudo labels.
struct PseudoLabelSnapshot {
  int epoch = 0;
  // One entry per unlabeled row; empty when propagation is disabled.
  std::span<const int> pseudo_labels;
  const AugmentedSeeds* seeds = nullptr;  // null when augmentation is off
  const PropagationGraph* graph = nullptr;
  const PropagationResult* propagation = nullptr;
};

/// Optional callbacks; they may fill the diagnostic fields of the record.
struct AdaptHooks {
  std::function<void(const PseudoLabelSnapshot&, EpochRecord&)> on_pseudo_labels;
  std::function<void(const ModelParams&, EpochRecord&)> on_epoch_end;
};

struct AdaptResult {
  ModelParams model;
  TrainReport report;
};

/// Fresh model sized for `input_dim` inputs and `num_classes` outputs.
ModelParams make_model(const AdaptConfig& cfg, int input_dim, int num_classes);

/// Trains every group on the `train` rows with label-smoothed cross-entropy
/// and returns the parameters of the epoch with the best `val` accuracy.
ModelParams pretrain_source(const ModelParams& model, const Dataset& source, const AdaptConfig& cfg);

/// Adapts encoder and bottleneck to the target task with the classifier frozen.
AdaptResult adapt(const ModelParams& model, const TargetTask& target, const AdaptConfig& cfg,
                  const AdaptHooks& hooks = {});

std::vector<int> predict(const ModelParams& model, const Matrix& x);

/// Accuracy of dropout-free predictions against the labels of `data`.
double evaluate(const ModelParams& model, const Dataset& data);

}  // namespace mesh

#pragma once

// Experiment front end: baseline/method presets, seeded multi-run
// experiments, sweeps and their report files.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mesh/dataset.hpp"
#include "mesh/trainer.hpp"

namespace mesh {

enum class Method {
  source_target,  // S+T: labeled target only
  ent,            // entropy minimization only
  mesh_na,        // full method without uncertainty-augmented seeds
  mesh,
};

std::string to_string(Method m);
Method parse_method(const std::string& s);

/// Sets the ablation switches that define `method`; other fields are kept.
AdaptConfig apply_method(AdaptConfig cfg, Method method);

struct ExperimentSpec {
  SyntheticSpec task;
  // When both are set the datasets are read from disk instead of generated.
  std::optional<std::filesystem::path> source_path;
  std::optional<std::filesystem::path> target_path;
  Method method = Method::mesh;
  AdaptConfig cfg;
  std::vector<std::uint64_t> seeds = {2021, 2022, 2023};
  int shots = 3;
  double test_fraction = 0.2;
  std::filesystem::path out;
  std::optional<std::filesystem::path> train_log_dir;
  std::optional<std::filesystem::path> debug_graph;
  int threads = 1;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double source_val_acc = 0.0;
  double source_only_acc = 0.0;  // pretrained model on the target test rows
  double target_acc = 0.0;
  // Means over epochs of the per-epoch diagnostics, when available.
  std::optional<double> pseudo_label_acc;
  std::optional<double> seed_acc;
  TrainReport report;
};

struct ExperimentResult {
  Method method = Method::mesh;
  std::vector<SeedResult> runs;
  double mean_source_val_acc = 0.0;
  double mean_source_only_acc = 0.0;
  double mean_target_acc = 0.0;
  double std_target_acc = 0.0;  // population standard deviation
  std::optional<double> mean_pseudo_label_acc;
  std::optional<double> mean_seed_acc;
};

/// Adapts on the labeled/unlabeled rows of `target` and fills every epoch's
/// diagnostics from the ground truth the trainer never sees.
AdaptResult adapt_with_diagnostics(const ModelParams& model, const Dataset& target,
                                   const AdaptConfig& cfg, std::ostream* graph_dump = nullptr);

/// Data preparation, pretraining, adaptation and scoring for one seed.
SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed);

/// Runs every seed and writes the report to spec.out when it is non-empty.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// Tab-separated: one row per seed and a final "mean" row, which also holds
/// the standard deviation of the target accuracy.
void write_experiment_report(std::ostream& os, const ExperimentResult& result);

struct SweepPoint {
  double value = 0.0;
  ExperimentResult result;
  std::filesystem::path report_path;
};

/// Re-runs `base` for each value of `param` (lambda0, k-hat or shots) and
/// writes one report per point plus a summary into `out_dir`.
std::vector<SweepPoint> run_sweep(const ExperimentSpec& base, const std::string& param,
                                  const std::vector<double>& values,
                                  const std::filesystem::path& out_dir);

}  // namespace mesh

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mesh/linalg.hpp"

namespace mesh {

enum class Domain { source, target };
enum class Split { train, val, labeled, unlabeled, test };

std::string to_string(Domain d);
std::string to_string(Split s);
Domain parse_domain(const std::string& s);
Split parse_split(const std::string& s);

/// Feature rows with per-row class and split tags. A label of -1 means the
/// class is unknown. Rows tagged `unlabeled` may still carry their true class
/// for scoring; that label is never handed to adaptation (see TargetTask).
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<Split> splits;
  Domain domain = Domain::source;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Eigen::Index dim() const { return features.cols(); }

  std::vector<std::size_t> rows_in(Split s) const;
  Dataset subset(const std::vector<std::size_t>& rows) const;
  Dataset select(Split s) const { return subset(rows_in(s)); }

  /// Throws DataError if the invariants (sizes, label ranges) are broken.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// What adaptation is allowed to see of a target domain: labeled rows with
/// their classes and unlabeled rows without.
struct TargetTask {
  Matrix labeled_x;
  std::vector<int> labeled_y;
  Matrix unlabeled_x;
  int num_classes = 0;
};

/// Builds the task from the `labeled` and `unlabeled` rows of a target set.
TargetTask make_target_task(const Dataset& target);

/// Fraction of rows whose label equals `predicted`.
double accuracy(std::span<const int> predicted, std::span<const int> truth);

struct SyntheticSpec {
  int num_classes = 4;
  int n_source = 800;
  int m_target = 800;
  int dim = 10;
  double rotation_deg = 50.0;
  double translation = 2.5;
  double noise = 0.35;
  double radius = 1.0;
  double val_fraction = 0.1;
  std::uint64_t seed = 2021;
};

/// K Gaussian blobs evenly spaced on a circle, lifted from 2-D to `dim`
/// dimensions by a fixed random linear map. The target domain rotates the
/// blob centres by `rotation_deg` and translates them by `translation` along
/// the first planar axis. Source rows are tagged train/val (stratified),
/// target rows unlabeled with their true class.
std::pair<Dataset, Dataset> gen_synthetic_shift(const SyntheticSpec& spec);

/// Tags exactly `shots` random rows per class as labeled and a stratified
/// `test_fraction` of the remainder as test; the rest become unlabeled.
Dataset split_nshot(const Dataset& target, int shots, std::uint64_t seed,
                    double test_fraction = 0.2);

// File format: comma-separated text. The first line is
//   features,<d>,classes,<K>
// and every following line holds d feature values (17 significant digits),
// then the label (-1 allowed), the domain tag and the split tag.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mesh

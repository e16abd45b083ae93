#include "mesh/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mesh/random.hpp"

namespace mesh {

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::labeled:
      return "labeled";
    case Split::unlabeled:
      return "unlabeled";
    case Split::test:
      return "test";
  }
  return "?";
}

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ParameterError("unknown domain tag '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "labeled") return Split::labeled;
  if (s == "unlabeled") return Split::unlabeled;
  if (s == "test") return Split::test;
  throw ParameterError("unknown split tag '" + s + "'");
}

std::vector<std::size_t> Dataset::rows_in(Split s) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) rows.push_back(i);
  }
  return rows;
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.domain = domain;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
    out.splits.push_back(splits[rows[i]]);
  }
  return out;
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size() || labels.size() != splits.size()) {
    throw DataError("dataset: feature, label and split counts disagree");
  }
  if (num_classes < 1) throw DataError("dataset: class count must be positive");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < -1 || y >= num_classes) {
      throw DataError("dataset: row " + std::to_string(i) + " label " + std::to_string(y) +
                      " outside {-1} U [0, " + std::to_string(num_classes) + ")");
    }
    if (y == -1 && splits[i] != Split::unlabeled) {
      throw DataError("dataset: row " + std::to_string(i) + " tagged " + to_string(splits[i]) +
                      " has no label");
    }
  }
  if (!linalg::all_finite(features)) throw DataError("dataset: non-finite feature value");
}

TargetTask make_target_task(const Dataset& target) {
  target.validate();
  TargetTask task;
  task.num_classes = target.num_classes;
  const auto labeled = target.rows_in(Split::labeled);
  const auto unlabeled = target.rows_in(Split::unlabeled);
  task.labeled_x.resize(static_cast<Eigen::Index>(labeled.size()), target.dim());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    task.labeled_x.row(static_cast<Eigen::Index>(i)) = target.features.row(static_cast<Eigen::Index>(labeled[i]));
    task.labeled_y.push_back(target.labels[labeled[i]]);
  }
  task.unlabeled_x.resize(static_cast<Eigen::Index>(unlabeled.size()), target.dim());
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    task.unlabeled_x.row(static_cast<Eigen::Index>(i)) = target.features.row(static_cast<Eigen::Index>(unlabeled[i]));
  }
  return task;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
  if (predicted.empty()) throw ParameterError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

namespace {

std::vector<int> balanced_counts(int total, int classes) {
  std::vector<int> counts(static_cast<std::size_t>(classes), total / classes);
  for (int c = 0; c < total % classes; ++c) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

Dataset sample_blobs(const SyntheticSpec& spec, int total, double rotation_rad, double shift,
                     const Matrix& lift, Domain domain, Rng& rng) {
  const int k = spec.num_classes;
  Dataset ds;
  ds.domain = domain;
  ds.num_classes = k;
  Matrix planar(total, 2);
  Eigen::Index row = 0;
  const auto counts = balanced_counts(total, k);
  for (int c = 0; c < k; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / k + rotation_rad;
    const double cx = spec.radius * std::cos(angle) + shift;
    const double cy = spec.radius * std::sin(angle);
    for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i, ++row) {
      planar(row, 0) = cx + spec.noise * rng.normal();
      planar(row, 1) = cy + spec.noise * rng.normal();
      ds.labels.push_back(c);
    }
  }
  ds.features = planar * lift;
  ds.splits.assign(ds.labels.size(), Split::unlabeled);
  return ds;
}

std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] >= 0) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  return by_class;
}

}  // namespace

std::pair<Dataset, Dataset> gen_synthetic_shift(const SyntheticSpec& spec) {
  const int k = spec.num_classes;
  if (k < 2) throw ParameterError("gen_synthetic_shift: need at least two classes");
  if (spec.n_source < k || spec.m_target < k) {
    throw ParameterError("gen_synthetic_shift: sample counts must be at least the class count");
  }
  if (spec.dim < 2) throw ParameterError("gen_synthetic_shift: dim must be >= 2");
  if (!(spec.noise >= 0.0) || !(spec.radius > 0.0)) {
    throw ParameterError("gen_synthetic_shift: noise must be >= 0 and radius > 0");
  }
  if (!(spec.val_fraction >= 0.0 && spec.val_fraction < 1.0)) {
    throw ParameterError("gen_synthetic_shift: val_fraction must lie in [0, 1)");
  }
  // A rotation by a non-zero multiple of the blob spacing puts every target
  // blob exactly onto another class's source blob.
  const double spacing = 360.0 / k;
  const double turn = std::fmod(std::fmod(spec.rotation_deg, 360.0) + 360.0, 360.0);
  const double residue = std::fmod(turn, spacing);
  if (turn > 1e-9 && 360.0 - turn > 1e-9 && (residue < 1e-9 || spacing - residue < 1e-9)) {
    throw ParameterError("gen_synthetic_shift: rotation of " + std::to_string(spec.rotation_deg) +
                         " degrees maps blobs onto each other");
  }

  // Orthonormal lift keeps planar distances intact.
  Rng lift_rng(mix_seed(spec.seed, 1));
  const Matrix gaussian = lift_rng.normal_matrix(spec.dim, 2);
  const Matrix q = Eigen::HouseholderQR<Matrix>(gaussian).householderQ() * Matrix::Identity(spec.dim, 2);
  const Matrix lift = q.transpose();

  Rng source_rng(mix_seed(spec.seed, 2));
  Rng target_rng(mix_seed(spec.seed, 3));
  Dataset source = sample_blobs(spec, spec.n_source, 0.0, 0.0, lift, Domain::source, source_rng);
  Dataset target = sample_blobs(spec, spec.m_target, spec.rotation_deg * std::numbers::pi / 180.0,
                                spec.translation, lift, Domain::target, target_rng);

  Rng split_rng(mix_seed(spec.seed, 4));
  source.splits.assign(source.size(), Split::train);
  for (auto& rows : rows_by_class(source)) {
    split_rng.shuffle(rows);
    const auto n_val = static_cast<std::size_t>(std::floor(spec.val_fraction * static_cast<double>(rows.size())));
    for (std::size_t i = 0; i < n_val; ++i) source.splits[rows[i]] = Split::val;
  }
  return {std::move(source), std::move(target)};
}

Dataset split_nshot(const Dataset& target, int shots, std::uint64_t seed, double test_fraction) {
  if (shots < 1) throw ParameterError("split_nshot: shots must be >= 1");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ParameterError("split_nshot: test_fraction must lie in [0, 1)");
  }
  Dataset out = target;
  out.splits.assign(out.size(), Split::unlabeled);
  Rng rng(mix_seed(seed, 5));
  auto by_class = rows_by_class(target);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.size() < static_cast<std::size_t>(shots) + 1) {
      throw DataError("split_nshot: class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                      " samples, need at least " + std::to_string(shots + 1));
    }
    rng.shuffle(rows);
    for (int i = 0; i < shots; ++i) out.splits[rows[static_cast<std::size_t>(i)]] = Split::labeled;
    const std::size_t rest = rows.size() - static_cast<std::size_t>(shots);
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(rest)));
    for (std::size_t i = 0; i < n_test; ++i) out.splits[rows[static_cast<std::size_t>(shots) + i]] = Split::test;
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "features," << ds.dim() << ",classes," << ds.num_classes << '\n';
  char buf[40];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.features(static_cast<Eigen::Index>(i), j));
      os << buf << ',';
    }
    os << ds.labels[i] << ',' << to_string(ds.domain) << ',' << to_string(ds.splits[i]) << '\n';
  }
  if (!os) throw Error("write failed for " + path.string());
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  const std::string name = path.string();
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(name, line_no, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  int dim = 0;
  Dataset ds;
  if (header.size() != 4 || header[0] != "features" || header[2] != "classes" ||
      !parse_number(header[1], dim) || !parse_number(header[3], ds.num_classes) || dim < 1 ||
      ds.num_classes < 1) {
    throw ParseError(name, line_no, "missing header 'features,<d>,classes,<K>'");
  }

  std::vector<double> values;
  bool domain_set = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != static_cast<std::size_t>(dim) + 3) {
      throw ParseError(name, line_no, "expected " + std::to_string(dim + 3) + " fields, got " +
                                          std::to_string(fields.size()));
    }
    for (int j = 0; j < dim; ++j) {
      double v;
      if (!parse_number(fields[static_cast<std::size_t>(j)], v) || !std::isfinite(v)) {
        throw ParseError(name, line_no, "bad feature value '" + fields[static_cast<std::size_t>(j)] + "'");
      }
      values.push_back(v);
    }
    int label;
    if (!parse_number(fields[static_cast<std::size_t>(dim)], label) || label < -1 || label >= ds.num_classes) {
      throw ParseError(name, line_no, "bad label '" + fields[static_cast<std::size_t>(dim)] + "'");
    }
    Domain domain;
    Split split;
    try {
      domain = parse_domain(fields[static_cast<std::size_t>(dim) + 1]);
      split = parse_split(fields[static_cast<std::size_t>(dim) + 2]);
    } catch (const ParameterError& e) {
      throw ParseError(name, line_no, e.what());
    }
    if (domain_set && domain != ds.domain) throw ParseError(name, line_no, "mixed domain tags");
    ds.domain = domain;
    domain_set = true;
    if (label == -1 && split != Split::unlabeled) {
      throw ParseError(name, line_no, "label -1 on a row tagged " + to_string(split));
    }
    ds.labels.push_back(label);
    ds.splits.push_back(split);
  }
  ds.features = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(ds.labels.size()), dim);
  return ds;
}

}  // namespace mesh

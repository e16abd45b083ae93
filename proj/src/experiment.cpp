#include "mesh/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <ostream>

namespace mesh {

std::string to_string(Method m) {
  switch (m) {
    case Method::source_target:
      return "S+T";
    case Method::ent:
      return "ENT";
    case Method::mesh_na:
      return "MESH-nA";
    case Method::mesh:
      return "MESH";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "S+T" || u == "ST" || u == "S_T") return Method::source_target;
  if (u == "ENT") return Method::ent;
  if (u == "MESH-NA" || u == "MESH_NA" || u == "MESHNA") return Method::mesh_na;
  if (u == "MESH") return Method::mesh;
  throw ParameterError("unknown method '" + s + "' (expected S+T, ENT, MESH-nA or MESH)");
}

AdaptConfig apply_method(AdaptConfig cfg, Method method) {
  switch (method) {
    case Method::source_target:
      cfg.no_augmentation = cfg.no_ent = cfg.no_ps = cfg.no_vat = cfg.no_div = true;
      break;
    case Method::ent:
      cfg.no_augmentation = cfg.no_ps = cfg.no_vat = cfg.no_div = true;
      cfg.no_ent = false;
      break;
    case Method::mesh_na:
      cfg.no_augmentation = true;
      break;
    case Method::mesh:
      break;
  }
  return cfg;
}

namespace {

std::optional<double> mean_of(const std::vector<EpochRecord>& epochs,
                              std::optional<double> EpochRecord::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : epochs) {
    if (const auto& v = e.*field) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

// Rows used for scoring: the held-out test rows, or the unlabeled rows when
// there is no test split.
Dataset scoring_rows(const Dataset& target) {
  Dataset test = target.select(Split::test);
  if (test.size() > 0) return test;
  return target.select(Split::unlabeled);
}

}  // namespace

AdaptResult adapt_with_diagnostics(const ModelParams& model, const Dataset& target,
                                   const AdaptConfig& cfg, std::ostream* graph_dump) {
  const TargetTask task = make_target_task(target);
  const auto unlabeled_rows = target.rows_in(Split::unlabeled);
  std::vector<int> hidden;
  bool have_truth = true;
  for (std::size_t i : unlabeled_rows) {
    hidden.push_back(target.labels[i]);
    have_truth = have_truth && target.labels[i] >= 0;
  }
  const Dataset test = target.select(Split::test);

  AdaptHooks hooks;
  hooks.on_pseudo_labels = [&](const PseudoLabelSnapshot& snap, EpochRecord& record) {
    if (have_truth && !snap.pseudo_labels.empty()) {
      record.pseudo_label_accuracy = accuracy(snap.pseudo_labels, hidden);
    }
    if (have_truth && snap.seeds && snap.seeds->size() > 0) {
      std::vector<int> truth;
      for (std::size_t idx : snap.seeds->indices) truth.push_back(hidden[idx]);
      record.seed_accuracy = accuracy(snap.seeds->classes, truth);
    }
    if (graph_dump && snap.graph && snap.propagation) {
      *graph_dump << "# epoch " << snap.epoch << '\n';
      write_graph_dump(*graph_dump, *snap.graph, *snap.propagation);
    }
  };
  hooks.on_epoch_end = [&](const ModelParams& params, EpochRecord& record) {
    if (test.size() > 0) record.test_accuracy = evaluate(params, test);
  };
  return adapt(model, task, cfg, hooks);
}

SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  AdaptConfig cfg = apply_method(spec.cfg, spec.method);
  cfg.seed = seed;

  Dataset source;
  Dataset target;
  if (spec.source_path && spec.target_path) {
    source = load_dataset(*spec.source_path);
    target = load_dataset(*spec.target_path);
    if (target.rows_in(Split::labeled).empty()) {
      target = split_nshot(target, spec.shots, seed, spec.test_fraction);
    }
  } else {
    SyntheticSpec task = spec.task;
    task.seed = seed;
    auto generated = gen_synthetic_shift(task);
    source = std::move(generated.first);
    target = split_nshot(generated.second, spec.shots, seed, spec.test_fraction);
  }
  if (source.dim() != target.dim() || source.num_classes != target.num_classes) {
    throw DataError("source and target disagree on feature count or class count");
  }

  SeedResult out;
  out.seed = seed;
  const ModelParams init = make_model(cfg, static_cast<int>(source.dim()), source.num_classes);
  const ModelParams pretrained = pretrain_source(init, source, cfg);
  const Dataset val = source.select(Split::val);
  out.source_val_acc = evaluate(pretrained, val.size() > 0 ? val : source.select(Split::train));
  const Dataset scoring = scoring_rows(target);
  out.source_only_acc = evaluate(pretrained, scoring);

  std::optional<std::ofstream> dump;
  if (spec.debug_graph) {
    auto path = *spec.debug_graph;
    if (spec.seeds.size() > 1) path += ".seed" + std::to_string(seed);
    dump.emplace(path);
    if (!*dump) throw Error("cannot open " + path.string() + " for writing");
  }
  AdaptResult adapted = adapt_with_diagnostics(pretrained, target, cfg, dump ? &*dump : nullptr);
  out.target_acc = evaluate(adapted.model, scoring);
  adapted.report.final_accuracy = out.target_acc;
  out.pseudo_label_acc = mean_of(adapted.report.epochs, &EpochRecord::pseudo_label_accuracy);
  out.seed_acc = mean_of(adapted.report.epochs, &EpochRecord::seed_accuracy);
  out.report = std::move(adapted.report);

  if (spec.train_log_dir) {
    std::filesystem::create_directories(*spec.train_log_dir);
    const auto path = *spec.train_log_dir / (to_string(spec.method) + "_seed" + std::to_string(seed) + ".tsv");
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    write_train_report(os, out.report);
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  if (spec.seeds.empty()) throw ParameterError("experiment: seed list is empty");
  ExperimentResult result;
  result.method = spec.method;
  result.runs.resize(spec.seeds.size());

  const std::size_t workers = std::max(1, spec.threads);
  for (std::size_t begin = 0; begin < spec.seeds.size(); begin += workers) {
    const std::size_t end = std::min(spec.seeds.size(), begin + workers);
    std::vector<std::future<SeedResult>> pending;
    for (std::size_t i = begin; i < end; ++i) {
      pending.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                   [&spec, seed = spec.seeds[i]] { return run_seed(spec, seed); }));
    }
    for (std::size_t i = begin; i < end; ++i) result.runs[i] = pending[i - begin].get();
  }

  const double n = static_cast<double>(result.runs.size());
  double pseudo_sum = 0.0, seed_sum = 0.0;
  bool all_pseudo = true, all_seed = true;
  for (const auto& r : result.runs) {
    result.mean_source_val_acc += r.source_val_acc;
    result.mean_source_only_acc += r.source_only_acc;
    result.mean_target_acc += r.target_acc;
    all_pseudo = all_pseudo && r.pseudo_label_acc.has_value();
    all_seed = all_seed && r.seed_acc.has_value();
    pseudo_sum += r.pseudo_label_acc.value_or(0.0);
    seed_sum += r.seed_acc.value_or(0.0);
  }
  result.mean_source_val_acc /= n;
  result.mean_source_only_acc /= n;
  result.mean_target_acc /= n;
  if (all_pseudo) result.mean_pseudo_label_acc = pseudo_sum / n;
  if (all_seed) result.mean_seed_acc = seed_sum / n;
  double var = 0.0;
  for (const auto& r : result.runs) var += (r.target_acc - result.mean_target_acc) * (r.target_acc - result.mean_target_acc);
  result.std_target_acc = std::sqrt(var / n);

  if (!spec.out.empty()) {
    if (spec.out.has_parent_path()) std::filesystem::create_directories(spec.out.parent_path());
    std::ofstream os(spec.out);
    if (!os) throw Error("cannot open " + spec.out.string() + " for writing");
    write_experiment_report(os, result);
    if (!os) throw Error("write failed for " + spec.out.string());
  }
  return result;
}

void write_experiment_report(std::ostream& os, const ExperimentResult& result) {
  const std::string method = to_string(result.method);
  os << "method\tseed\tsource_val_acc\tsource_only_acc\ttarget_acc\tpseudo_label_acc\tseed_acc\t"
        "target_acc_std\n";
  for (const auto& r : result.runs) {
    os << method << '\t' << r.seed << '\t' << fmt(r.source_val_acc) << '\t' << fmt(r.source_only_acc) << '\t'
       << fmt(r.target_acc) << '\t' << fmt(r.pseudo_label_acc) << '\t' << fmt(r.seed_acc) << "\tNA\n";
  }
  os << method << "\tmean\t" << fmt(result.mean_source_val_acc) << '\t' << fmt(result.mean_source_only_acc)
     << '\t' << fmt(result.mean_target_acc) << '\t' << fmt(result.mean_pseudo_label_acc) << '\t'
     << fmt(result.mean_seed_acc) << '\t' << fmt(result.std_target_acc) << '\n';
}

std::vector<SweepPoint> run_sweep(const ExperimentSpec& base, const std::string& param,
                                  const std::vector<double>& values,
                                  const std::filesystem::path& out_dir) {
  if (values.empty()) throw ParameterError("sweep: no values given");
  std::filesystem::create_directories(out_dir);
  std::vector<SweepPoint> points;
  for (double v : values) {
    ExperimentSpec spec = base;
    if (param == "lambda0") {
      spec.cfg.lambda0 = v;
    } else if (param == "k-hat" || param == "k_hat") {
      spec.cfg.k_hat = static_cast<int>(std::lround(v));
    } else if (param == "shots") {
      spec.shots = static_cast<int>(std::lround(v));
    } else {
      throw ParameterError("sweep: unknown parameter '" + param + "' (expected lambda0, k-hat or shots)");
    }
    char label[64];
    std::snprintf(label, sizeof(label), "%g", v);
    spec.out = out_dir / ("sweep_" + param + "_" + label + ".tsv");
    SweepPoint point{v, run_experiment(spec), spec.out};
    points.push_back(std::move(point));
  }

  const auto summary_path = out_dir / ("sweep_" + param + "_summary.tsv");
  std::ofstream os(summary_path);
  if (!os) throw Error("cannot open " + summary_path.string() + " for writing");
  os << "method\t" << param << "\tmean_target_acc\tstd_target_acc\n";
  for (const auto& p : points) {
    os << to_string(base.method) << '\t' << fmt(p.value) << '\t' << fmt(p.result.mean_target_acc) << '\t'
       << fmt(p.result.std_target_acc) << '\n';
  }
  return points;
}

}  // namespace mesh

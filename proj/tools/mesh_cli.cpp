// Command-line front end: data generation, pretraining, adaptation,
// evaluation, multi-seed experiments and sweeps.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "mesh/experiment.hpp"

namespace {

using namespace mesh;

void add_config_options(CLI::App* app, AdaptConfig& cfg) {
  app->add_option("--hidden", cfg.hidden, "Encoder hidden layer sizes")->delimiter(',');
  app->add_option("--bottleneck-dim", cfg.bottleneck_dim, "Bottleneck width");
  app->add_option_function<std::string>(
      "--activation", [&cfg](const std::string& s) { cfg.activation = parse_activation(s); },
      "Hidden activation: tanh or relu");
  app->add_option("--lambda0", cfg.lambda0, "Weight of the pseudo-label loss");
  app->add_option("--alpha", cfg.alpha, "Propagation damping in (0, 1)");
  app->add_option("--k-hat", cfg.k_hat, "Neighbours kept per graph row");
  app->add_option("--eps-smooth", cfg.eps_smooth, "Label smoothing for source training");
  app->add_option("--eps-vat", cfg.eps_vat, "VAT perturbation radius");
  app->add_option("--vat-xi", cfg.vat_xi, "VAT probe length (<= 0: automatic)");
  app->add_option("--vat-power-iters", cfg.vat_power_iters, "VAT power iterations");
  app->add_option("--lr-encoder", cfg.lr_encoder, "Encoder learning rate");
  app->add_option("--lr-bottleneck", cfg.lr_bottleneck, "Bottleneck learning rate");
  app->add_option("--lr-classifier", cfg.lr_classifier, "Classifier learning rate (pretraining)");
  app->add_option("--momentum", cfg.momentum, "SGD momentum");
  app->add_option("--batch-size", cfg.batch_size, "Minibatch size");
  app->add_option("--pretrain-epochs", cfg.pretrain_epochs, "Source training epochs");
  app->add_option("--epochs", cfg.epochs, "Adaptation epochs");
  app->add_option("--steps-per-epoch", cfg.steps_per_epoch, "Steps per adaptation epoch (0: one pass)");
  app->add_option("--mc-passes", cfg.mc_passes, "MC-dropout passes");
  app->add_option("--dropout-rate", cfg.dropout_rate, "MC-dropout rate");
  app->add_option("--seed", cfg.seed, "Random seed");
  app->add_flag("--no-augmentation", cfg.no_augmentation, "Disable low-uncertainty seeds");
  app->add_flag("--no-ent", cfg.no_ent, "Disable the entropy term");
  app->add_flag("--no-ps", cfg.no_ps, "Disable propagation and the pseudo-label term");
  app->add_flag("--no-vat", cfg.no_vat, "Disable the VAT term");
  app->add_flag("--no-div", cfg.no_div, "Disable the diversity term");
}

void add_task_options(CLI::App* app, SyntheticSpec& task) {
  app->add_option("--classes", task.num_classes, "Number of classes");
  app->add_option("--n-source", task.n_source, "Source sample count");
  app->add_option("--m-target", task.m_target, "Target sample count");
  app->add_option("--dim", task.dim, "Feature dimension");
  app->add_option("--rotation", task.rotation_deg, "Target rotation in degrees");
  app->add_option("--translation", task.translation, "Target translation");
  app->add_option("--noise", task.noise, "Blob standard deviation");
  app->add_option("--radius", task.radius, "Radius of the blob circle");
  app->add_option("--val-fraction", task.val_fraction, "Source validation fraction");
}

void add_split_options(CLI::App* app, int& shots, double& test_fraction) {
  app->add_option("--shots", shots, "Labeled target samples per class");
  app->add_option("--test-fraction", test_fraction, "Held-out target fraction");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Expands `--config FILE` into command-line tokens placed before the user's
// own arguments, skipping keys the user set explicitly.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string config_path;
  std::set<std::string> explicit_keys;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
    if (a.rfind("--", 0) == 0) explicit_keys.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  }
  if (config_path.empty() || args.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw Error("cannot open config file " + config_path);
  std::vector<std::string> injected;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(config_path, line_no, "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (explicit_keys.contains(key)) continue;
    if (key.rfind("no-", 0) == 0) {
      if (value == "true" || value == "1" || value == "yes") injected.push_back("--" + key);
      continue;
    }
    injected.push_back("--" + key);
    injected.push_back(value);
  }
  // args[0] is the subcommand name.
  std::vector<std::string> out{args[0]};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Source-free semi-supervised domain adaptation"};
  app.require_subcommand(1);
  std::string config;

  // gen-data
  SyntheticSpec gen_task;
  int gen_shots = 0;
  double gen_test_fraction = 0.2;
  std::string gen_source_out, gen_target_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shifted source/target pair");
  add_task_options(gen, gen_task);
  add_split_options(gen, gen_shots, gen_test_fraction);
  gen->add_option("--seed", gen_task.seed, "Random seed");
  gen->add_option("--out-source", gen_source_out, "Source dataset file")->required();
  gen->add_option("--out-target", gen_target_out, "Target dataset file")->required();
  gen->add_option("--config", config, "key=value configuration file");

  // pretrain
  AdaptConfig pre_cfg;
  std::string pre_source, pre_out;
  auto* pre = app.add_subcommand("pretrain", "Train encoder, bottleneck and classifier on source data");
  add_config_options(pre, pre_cfg);
  pre->add_option("--source", pre_source, "Source dataset file")->required();
  pre->add_option("--out", pre_out, "Checkpoint to write")->required();
  pre->add_option("--config", config, "key=value configuration file");

  // adapt
  AdaptConfig ad_cfg;
  std::string ad_model, ad_target, ad_out, ad_report, ad_method = "MESH", ad_debug;
  int ad_shots = 3;
  double ad_test_fraction = 0.2;
  auto* ad = app.add_subcommand("adapt", "Adapt a pretrained model to a target dataset");
  add_config_options(ad, ad_cfg);
  add_split_options(ad, ad_shots, ad_test_fraction);
  ad->add_option("--model", ad_model, "Pretrained checkpoint")->required();
  ad->add_option("--target", ad_target, "Target dataset file")->required();
  ad->add_option("--out", ad_out, "Adapted checkpoint to write")->required();
  ad->add_option("--report", ad_report, "Per-epoch training report");
  ad->add_option("--method", ad_method, "S+T, ENT, MESH-nA or MESH");
  ad->add_option("--debug-graph", ad_debug, "Dump propagation graphs and scores");
  ad->add_option("--config", config, "key=value configuration file");

  // eval
  std::string ev_model, ev_data, ev_split;
  auto* ev = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset");
  ev->add_option("--model", ev_model, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset file")->required();
  ev->add_option("--split", ev_split, "Only score rows with this split tag");
  ev->add_option("--config", config, "key=value configuration file");

  // experiment and sweep share their options
  ExperimentSpec ex_spec;
  std::string ex_method = "MESH", ex_out, ex_source, ex_target, ex_log_dir, ex_debug;
  std::vector<std::uint64_t> ex_seeds{2021, 2022, 2023};
  std::string sweep_param;
  std::vector<double> sweep_values;
  auto add_experiment_options = [&](CLI::App* sub) {
    add_config_options(sub, ex_spec.cfg);
    add_task_options(sub, ex_spec.task);
    add_split_options(sub, ex_spec.shots, ex_spec.test_fraction);
    sub->add_option("--method", ex_method, "S+T, ENT, MESH-nA or MESH");
    sub->add_option("--seeds", ex_seeds, "Seeds, comma separated")->delimiter(',');
    sub->add_option("--source", ex_source, "Source dataset file (instead of synthetic data)");
    sub->add_option("--target", ex_target, "Target dataset file (instead of synthetic data)");
    sub->add_option("--train-log-dir", ex_log_dir, "Directory for per-seed training reports");
    sub->add_option("--debug-graph", ex_debug, "Dump propagation graphs and scores");
    sub->add_option("--threads", ex_spec.threads, "Seeds run concurrently");
    sub->add_option("--config", config, "key=value configuration file");
  };
  auto* ex = app.add_subcommand("experiment", "Pretrain, adapt and score over several seeds");
  add_experiment_options(ex);
  ex->add_option("--out", ex_out, "Report file")->required();
  auto* sw = app.add_subcommand("sweep", "Repeat an experiment over values of one parameter");
  add_experiment_options(sw);
  sw->add_option("--param", sweep_param, "lambda0, k-hat or shots")->required();
  sw->add_option("--values", sweep_values, "Values, comma separated")->delimiter(',')->required();
  sw->add_option("--out", ex_out, "Output directory")->required();

  std::vector<std::string> args(argv + 1, argv + argc);
  args = expand_config(args);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  if (*gen) {
    auto [source, target] = gen_synthetic_shift(gen_task);
    if (gen_shots > 0) target = split_nshot(target, gen_shots, gen_task.seed, gen_test_fraction);
    save_dataset(source, gen_source_out);
    save_dataset(target, gen_target_out);
  } else if (*pre) {
    const Dataset source = load_dataset(pre_source);
    const ModelParams init = make_model(pre_cfg, static_cast<int>(source.dim()), source.num_classes);
    const ModelParams trained = pretrain_source(init, source, pre_cfg);
    save_checkpoint(trained, pre_out);
    const Dataset val = source.select(Split::val);
    if (val.size() > 0) std::cout << "source_val_acc\t" << evaluate(trained, val) << '\n';
  } else if (*ad) {
    const AdaptConfig cfg = apply_method(ad_cfg, parse_method(ad_method));
    const ModelParams model = load_checkpoint(ad_model);
    Dataset target = load_dataset(ad_target);
    if (target.rows_in(Split::labeled).empty()) target = split_nshot(target, ad_shots, cfg.seed, ad_test_fraction);
    std::optional<std::ofstream> dump;
    if (!ad_debug.empty()) {
      dump.emplace(ad_debug);
      if (!*dump) throw Error("cannot open " + ad_debug + " for writing");
    }
    AdaptResult result = adapt_with_diagnostics(model, target, cfg, dump ? &*dump : nullptr);
    const Dataset test = target.select(Split::test);
    if (test.size() > 0) {
      result.report.final_accuracy = evaluate(result.model, test);
      std::cout << "target_test_acc\t" << *result.report.final_accuracy << '\n';
    }
    save_checkpoint(result.model, ad_out);
    if (!ad_report.empty()) {
      std::ofstream os(ad_report);
      if (!os) throw Error("cannot open " + ad_report + " for writing");
      write_train_report(os, result.report);
    }
  } else if (*ev) {
    const ModelParams model = load_checkpoint(ev_model);
    Dataset data = load_dataset(ev_data);
    if (!ev_split.empty()) data = data.select(parse_split(ev_split));
    std::cout << "accuracy\t" << evaluate(model, data) << '\n';
  } else if (*ex || *sw) {
    ex_spec.method = parse_method(ex_method);
    ex_spec.seeds = ex_seeds;
    if (!ex_source.empty() || !ex_target.empty()) {
      if (ex_source.empty() || ex_target.empty()) throw ParameterError("--source and --target go together");
      ex_spec.source_path = ex_source;
      ex_spec.target_path = ex_target;
    }
    if (!ex_log_dir.empty()) ex_spec.train_log_dir = ex_log_dir;
    if (!ex_debug.empty()) ex_spec.debug_graph = ex_debug;
    if (*ex) {
      ex_spec.out = ex_out;
      const auto result = run_experiment(ex_spec);
      std::cout << to_string(result.method) << "\tmean_target_acc\t" << result.mean_target_acc << "\tstd\t"
                << result.std_target_acc << '\n';
    } else {
      for (const auto& p : run_sweep(ex_spec, sweep_param, sweep_values, ex_out)) {
        std::cout << sweep_param << '=' << p.value << "\tmean_target_acc\t" << p.result.mean_target_acc << '\n';
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

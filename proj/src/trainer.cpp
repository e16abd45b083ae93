#include "mesh/trainer.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "mesh/random.hpp"

namespace mesh {

void AdaptConfig::validate() const {
  auto fail = [](const std::string& what) { throw ParameterError("config: " + what); };
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (!(lambda0 >= 0.0)) fail("lambda0 must be >= 0");
  if (!(lr_encoder > 0.0 && lr_bottleneck > 0.0 && lr_classifier > 0.0)) fail("learning rates must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (k_hat < 1) fail("k_hat must be >= 1");
  if (!(eps_smooth >= 0.0 && eps_smooth < 1.0)) fail("eps_smooth must lie in [0, 1)");
  if (!(eps_vat > 0.0)) fail("eps_vat must be > 0");
  if (vat_power_iters < 1) fail("vat_power_iters must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (pretrain_epochs < 1 || epochs < 0) fail("epoch counts out of range");
  if (steps_per_epoch < 0) fail("steps_per_epoch must be >= 0");
  if (mc_passes < 1) fail("mc_passes must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (bottleneck_dim < 1 || hidden.empty()) fail("need at least one hidden layer and a bottleneck");
  for (int h : hidden) {
    if (h < 1) fail("hidden sizes must be positive");
  }
}

namespace {

// Heavy-ball SGD: v <- momentum * v + g, w <- w - lr * v.
class MomentumSgd {
 public:
  MomentumSgd(double momentum, double lr_encoder, double lr_bottleneck, double lr_classifier)
      : momentum_(momentum), lr_{lr_encoder, lr_bottleneck, lr_classifier} {}

  void step(ModelParams& params, const Gradients& grads) {
    if (!grads.encoder.empty()) {
      if (encoder_.empty()) {
        for (const auto& layer : params.encoder) encoder_.push_back(zero_like(layer));
      }
      for (std::size_t i = 0; i < params.encoder.size(); ++i) {
        apply(params.encoder[i], encoder_[i], grads.encoder[i], lr_[0]);
      }
    }
    if (grads.bottleneck) {
      if (!bottleneck_) bottleneck_ = zero_like(params.bottleneck);
      apply(params.bottleneck, *bottleneck_, *grads.bottleneck, lr_[1]);
    }
    if (grads.classifier) {
      if (!classifier_) classifier_ = zero_like(params.classifier);
      apply(params.classifier, *classifier_, *grads.classifier, lr_[2]);
    }
  }

 private:
  static LayerGradient zero_like(const DenseLayer& layer) {
    return {Matrix::Zero(layer.weight.rows(), layer.weight.cols()), Vector::Zero(layer.bias.size())};
  }

  void apply(DenseLayer& layer, LayerGradient& velocity, const LayerGradient& g, double lr) const {
    velocity.weight = momentum_ * velocity.weight + g.weight;
    velocity.bias = momentum_ * velocity.bias + g.bias;
    layer.weight -= lr * velocity.weight;
    layer.bias -= lr * velocity.bias;
  }

  double momentum_;
  std::array<double, 3> lr_;
  std::vector<LayerGradient> encoder_;
  std::optional<LayerGradient> bottleneck_;
  std::optional<LayerGradient> classifier_;
};

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v[r]);
  return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

StepLosses to_step(const LossBundle& b) {
  return {b.l_lab, b.l_ent, b.l_ps, b.l_vadv, b.l_div, b.l_reg, b.l_total};
}

StepLosses mean_of(std::span<const StepLosses> steps) {
  StepLosses m;
  if (steps.empty()) return m;
  for (const auto& s : steps) {
    m.l_lab += s.l_lab;
    m.l_ent += s.l_ent;
    m.l_ps += s.l_ps;
    m.l_vadv += s.l_vadv;
    m.l_div += s.l_div;
    m.l_reg += s.l_reg;
    m.l_total += s.l_total;
  }
  const double n = static_cast<double>(steps.size());
  m.l_lab /= n;
  m.l_ent /= n;
  m.l_ps /= n;
  m.l_vadv /= n;
  m.l_div /= n;
  m.l_reg /= n;
  m.l_total /= n;
  return m;
}

// Draws fixed-size batches from a small index set, reshuffling each time the
// set is exhausted.
class CyclingSampler {
 public:
  CyclingSampler(std::size_t n, std::uint64_t seed) : order_(iota_indices(n)), rng_(seed) {
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_train_report(std::ostream& os, const TrainReport& report) {
  os << "epoch\tl_lab\tl_ent\tl_ps\tl_vadv\tl_div\tl_reg\tl_total\tnum_seeds\tpseudo_label_acc\t"
        "seed_acc\ttest_acc\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string("NA"); };
  for (const auto& e : report.epochs) {
    const auto& l = e.losses;
    os << e.epoch << '\t' << num(l.l_lab) << '\t' << num(l.l_ent) << '\t' << num(l.l_ps) << '\t'
       << num(l.l_vadv) << '\t' << num(l.l_div) << '\t' << num(l.l_reg) << '\t' << num(l.l_total)
       << '\t' << e.num_seeds << '\t' << opt(e.pseudo_label_accuracy) << '\t' << opt(e.seed_accuracy)
       << '\t' << opt(e.test_accuracy) << '\n';
  }
}

ModelParams make_model(const AdaptConfig& cfg, int input_dim, int num_classes) {
  std::vector<int> dims{input_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.bottleneck_dim);
  dims.push_back(num_classes);
  return init_model(dims, mix_seed(cfg.seed, 0), cfg.activation);
}

std::vector<int> predict(const ModelParams& model, const Matrix& x) {
  return linalg::row_argmax(forward(model, x).logits);
}

double evaluate(const ModelParams& model, const Dataset& data) {
  if (data.size() == 0) throw ParameterError("evaluate: empty dataset");
  for (int y : data.labels) {
    if (y < 0) throw ParameterError("evaluate: dataset contains rows without ground truth");
  }
  return accuracy(predict(model, data.features), data.labels);
}

ModelParams pretrain_source(const ModelParams& model, const Dataset& source, const AdaptConfig& cfg) {
  cfg.validate();
  source.validate();
  const int k = source.num_classes;
  if (source.dim() != model.input_dim() || k != model.num_classes()) {
    throw ShapeError("pretrain_source: model does not match the source data");
  }
  const Dataset train = source.select(Split::train);
  const Dataset val = source.select(Split::val);
  std::vector<int> per_class(static_cast<std::size_t>(k), 0);
  for (int y : train.labels) ++per_class[static_cast<std::size_t>(y)];
  for (int c = 0; c < k; ++c) {
    if (per_class[static_cast<std::size_t>(c)] < 2) {
      throw DataError("pretrain_source: class " + std::to_string(c) + " has fewer than 2 training samples");
    }
  }
  const Dataset& selection = val.size() > 0 ? val : train;

  ModelParams params = model;
  params.frozen.clear();
  MomentumSgd opt(cfg.momentum, cfg.lr_encoder, cfg.lr_bottleneck, cfg.lr_classifier);
  Rng rng(mix_seed(cfg.seed, 10));
  auto order = iota_indices(train.size());
  const Matrix targets = smooth_labels(train.labels, k, cfg.eps_smooth);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  ModelParams best = params;
  double best_acc = -1.0;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, order.size() - start));
      const auto run = forward(params, gather_rows(train.features, rows));
      const auto ce = cross_entropy(linalg::row_softmax(run.logits), gather_rows(targets, rows));
      opt.step(params, backward(params, run.cache, ce.dlogits));
    }
    const double acc = evaluate(params, selection);
    if (acc > best_acc) {
      best_acc = acc;
      best = params;
    }
  }
  return best;
}

AdaptResult adapt(const ModelParams& model, const TargetTask& target, const AdaptConfig& cfg,
                  const AdaptHooks& hooks) {
  cfg.validate();
  const int k = target.num_classes;
  const auto r = static_cast<std::size_t>(target.labeled_x.rows());
  const auto m = static_cast<std::size_t>(target.unlabeled_x.rows());
  if (target.labeled_y.size() != r) throw ShapeError("adapt: labeled rows and labels disagree");
  if (k != model.num_classes() || target.labeled_x.cols() != model.input_dim() ||
      target.unlabeled_x.cols() != model.input_dim()) {
    throw ShapeError("adapt: model does not match the target task");
  }
  if (m == 0) throw DataError("adapt: no unlabeled target rows");
  std::vector<bool> seen(static_cast<std::size_t>(k), false);
  for (int y : target.labeled_y) {
    if (y < 0 || y >= k) throw DataError("adapt: labeled target class out of range");
    seen[static_cast<std::size_t>(y)] = true;
  }
  for (int c = 0; c < k; ++c) {
    if (!seen[static_cast<std::size_t>(c)]) {
      throw DataError("adapt: labeled target set has no sample of class " + std::to_string(c));
    }
  }

  AdaptResult result;
  ModelParams& params = result.model;
  params = model;
  params.frozen = {Group::classifier};
  const DenseLayer frozen_head = params.classifier;

  MomentumSgd opt(cfg.momentum, cfg.lr_encoder, cfg.lr_bottleneck, cfg.lr_classifier);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t labeled_batch = std::min(batch, r);
  const std::size_t steps = cfg.steps_per_epoch > 0 ? static_cast<std::size_t>(cfg.steps_per_epoch)
                                                    : (m + batch - 1) / batch;
  const bool use_unlabeled = !(cfg.no_ent && cfg.no_ps && cfg.no_div);
  const VatOptions vat_options{cfg.eps_vat, cfg.vat_xi, cfg.vat_power_iters};

  CyclingSampler labeled_sampler(r, mix_seed(cfg.seed, 20));
  Rng unlabeled_rng(mix_seed(cfg.seed, 21));
  auto unlabeled_order = iota_indices(m);
  Matrix all_x(static_cast<Eigen::Index>(r + m), target.labeled_x.cols());
  all_x << target.labeled_x, target.unlabeled_x;

  std::vector<int> pseudo;
  std::uint64_t step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;

    // Pseudo labels for every unlabeled row, once per epoch.
    pseudo.clear();
    if (!cfg.no_ps) {
      std::vector<int> seed_classes(r + m, kUnseeded);
      std::copy(target.labeled_y.begin(), target.labeled_y.end(), seed_classes.begin());
      std::optional<AugmentedSeeds> seeds;
      if (!cfg.no_augmentation) {
        const auto report = estimate_uncertainty(params, target.unlabeled_x, cfg.mc_passes, cfg.dropout_rate,
                                                 mix_seed(mix_seed(cfg.seed, 30), static_cast<std::uint64_t>(epoch)));
        seeds = select_low_uncertainty(report, k);
        for (std::size_t s = 0; s < seeds->size(); ++s) seed_classes[r + seeds->indices[s]] = seeds->classes[s];
        record.num_seeds = seeds->size();
      }
      const auto graph = build_graph(extract_features(params, all_x), seed_classes, k, cfg.k_hat);
      const auto prop = propagate(graph, cfg.alpha);
      pseudo.assign(prop.labels.begin() + static_cast<std::ptrdiff_t>(r), prop.labels.end());
      if (hooks.on_pseudo_labels) {
        hooks.on_pseudo_labels({epoch, pseudo, seeds ? &*seeds : nullptr, &graph, &prop}, record);
      }
    } else if (hooks.on_pseudo_labels) {
      hooks.on_pseudo_labels({epoch, {}, nullptr, nullptr, nullptr}, record);
    }

    unlabeled_rng.shuffle(unlabeled_order);
    const std::size_t first_step = result.report.steps.size();
    for (std::size_t step = 0; step < steps; ++step, ++step_counter) {
      const auto lab_rows = labeled_sampler.next(labeled_batch);
      const std::size_t start = (step * batch) % m;
      std::vector<std::size_t> unl_rows;
      for (std::size_t i = 0; i < std::min(batch, m); ++i) unl_rows.push_back(unlabeled_order[(start + i) % m]);

      const Matrix xl = gather_rows(target.labeled_x, lab_rows);
      const Matrix xu = gather_rows(target.unlabeled_x, unl_rows);

      LossComponents comps;
      const auto lab = forward(params, xl);
      auto ce = cross_entropy(linalg::row_softmax(lab.logits), one_hot(gather(target.labeled_y, lab_rows), k));
      comps.l_lab = ce.loss;
      comps.d_lab = std::move(ce.dlogits);

      std::optional<ForwardResult> unl;
      if (use_unlabeled) {
        unl = forward(params, xu);
        const Matrix pu = linalg::row_softmax(unl->logits);
        if (!cfg.no_ent) {
          auto t = entropy_loss(pu);
          comps.l_ent = t.loss;
          comps.d_ent = std::move(t.dlogits);
        }
        if (!cfg.no_ps) {
          auto t = pseudo_ce_loss(pu, gather(pseudo, unl_rows));
          comps.l_ps = t.loss;
          comps.d_ps = std::move(t.dlogits);
        }
        if (!cfg.no_div) {
          auto t = diversity_loss(pu);
          comps.l_div = t.loss;
          comps.d_div = std::move(t.dlogits);
        }
      }
      std::optional<VatResult> vat;
      if (!cfg.no_vat) {
        Matrix joint(xl.rows() + xu.rows(), xl.cols());
        joint << xl, xu;
        vat = vat_loss(params, joint, vat_options, mix_seed(mix_seed(cfg.seed, 40), step_counter));
        comps.l_vadv = vat->loss;
        comps.d_vadv = vat->dlogits;
      }

      const LossBundle bundle = total_reg(comps, cfg.lambda0);
      Gradients grads = backward(params, lab.cache, bundle.labeled_seed);
      if (unl && bundle.unlabeled_seed.size() > 0) grads.accumulate(backward(params, unl->cache, bundle.unlabeled_seed));
      if (vat) grads.accumulate(backward(params, vat->cache, bundle.vat_seed));
      opt.step(params, grads);
      if (!(params.classifier == frozen_head)) {
        throw InvariantViolation("adapt: frozen classifier changed during adaptation");
      }
      result.report.steps.push_back(to_step(bundle));
    }
    record.losses = mean_of(std::span(result.report.steps).subspan(first_step));
    if (hooks.on_epoch_end) hooks.on_epoch_end(params, record);
    result.report.epochs.push_back(record);
  }
  return result;
}

}  // namespace mesh

#pragma once

// Scalar objectives used in pretraining and adaptation. Each loss takes the
// softmax probabilities of a batch and returns its value together with the
// gradient with respect to the logits that produced them, ready for
// mesh::backward. Batch reductions are means.

#include <cstdint>
#include <span>
#include <vector>

#include "mesh/model.hpp"

namespace mesh {

/// Floor applied to probabilities inside every log.
inline constexpr double kProbFloor = 1e-12;

struct LossGrad {
  double loss = 0.0;
  Matrix dlogits;
};

/// True class gets 1 - eps, every other class eps / K. Rows therefore sum to
/// 1 - eps / K rather than one.
Matrix smooth_labels(std::span<const int> labels, int num_classes, double eps);

Matrix one_hot(std::span<const int> labels, int num_classes);

/// -mean_i sum_k y_ik log p_ik. The gradient is the softmax composite
/// (p * sum_k y - y) / batch, which reduces to (p - y) / batch for rows that
/// sum to one.
LossGrad cross_entropy(const Matrix& p, const Matrix& targets);

/// Mean Shannon entropy of the rows, with 0 log 0 = 0.
LossGrad entropy_loss(const Matrix& p);

/// Row argmax, ties to the lowest index.
std::vector<int> hard_pseudo_label(const Matrix& p);

/// One-hot cross-entropy against hard pseudo labels.
LossGrad pseudo_ce_loss(const Matrix& p, std::span<const int> pseudo);

/// mean_i sum_k p_ik log(p_ik / q_ik), q floored at kProbFloor.
double kl_divergence(const Matrix& p, const Matrix& q);

/// KL(p || q) with p held constant, differentiated through the logits of q.
LossGrad kl_divergence_grad(const Matrix& p, const Matrix& q);

/// sum_k pbar_k log pbar_k where pbar is the column mean of p.
LossGrad diversity_loss(const Matrix& p);

struct VatOptions {
  double eps = 1.0;
  // Finite-difference probe length; non-positive selects 1e-6 * sqrt(input dim).
  double xi = 0.0;
  int power_iters = 1;
};

struct VatResult {
  double loss = 0.0;
  // Every row has Euclidean norm eps.
  Matrix perturbation;
  // Predictions at the clean inputs, treated as constants.
  Matrix clean_proba;
  // Gradient seed and cache of the perturbed forward pass.
  Matrix dlogits;
  ForwardCache cache;
};

/// Virtual adversarial loss. The adversarial direction is found by power
/// iteration on the KL divergence starting from `initial_probe` (normalized
/// per row before use), then the loss is evaluated at x + eps * d.
VatResult vat_loss(const ModelParams& params, const Matrix& x, const VatOptions& options,
                   const Matrix& initial_probe);

/// Same, with a Gaussian initial probe drawn from `seed`.
VatResult vat_loss(const ModelParams& params, const Matrix& x, const VatOptions& options,
                   std::uint64_t seed);

/// Parameter (and input) gradients of the VAT loss through the perturbed branch.
Gradients vat_gradients(const ModelParams& params, const VatResult& vat);

/// Per-step loss terms. Gradient seeds may be left empty for disabled terms.
struct LossComponents {
  double l_lab = 0.0;
  double l_ent = 0.0;
  double l_ps = 0.0;
  double l_vadv = 0.0;
  double l_div = 0.0;
  Matrix d_lab;   // labeled batch
  Matrix d_ent;   // unlabeled batch
  Matrix d_ps;    // unlabeled batch
  Matrix d_div;   // unlabeled batch
  Matrix d_vadv;  // perturbed joint batch
};

struct LossBundle {
  double l_lab = 0.0;
  double l_ent = 0.0;
  double l_ps = 0.0;
  double l_vadv = 0.0;
  double l_div = 0.0;
  double l_reg = 0.0;
  double l_total = 0.0;
  Matrix labeled_seed;
  Matrix unlabeled_seed;
  Matrix vat_seed;
};

/// l_reg = lambda0 * l_ps + l_ent + l_vadv + l_div and l_total = l_lab + l_reg,
/// with the gradient seeds combined the same way per batch.
LossBundle total_reg(const LossComponents& components, double lambda0);

}  // namespace mesh

#include "mesh/losses.hpp"

#include <cmath>
#include <string>

#include "mesh/random.hpp"

namespace mesh {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(where) + ": " + linalg::shape_str(a.rows(), a.cols()) + " vs " +
                     linalg::shape_str(b.rows(), b.cols()));
  }
}

void require_labels(std::span<const int> labels, int num_classes, const char* where) {
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ParameterError(std::string(where) + ": label " + std::to_string(y) + " outside [0, " +
                           std::to_string(num_classes) + ")");
    }
  }
}

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

// x log x with the 0 log 0 = 0 convention.
double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace

Matrix smooth_labels(std::span<const int> labels, int num_classes, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw ParameterError("smooth_labels: eps must lie in [0, 1)");
  require_labels(labels, num_classes, "smooth_labels");
  Matrix out = Matrix::Constant(static_cast<Eigen::Index>(labels.size()), num_classes,
                                eps / static_cast<double>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) out(static_cast<Eigen::Index>(i), labels[i]) = 1.0 - eps;
  return out;
}

Matrix one_hot(std::span<const int> labels, int num_classes) {
  return smooth_labels(labels, num_classes, 0.0);
}

LossGrad cross_entropy(const Matrix& p, const Matrix& targets) {
  require_same_shape(p, targets, "cross_entropy");
  const double batch = static_cast<double>(p.rows());
  LossGrad out{0.0, Matrix(p.rows(), p.cols())};
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index k = 0; k < p.cols(); ++k) row += targets(i, k) * safe_log(p(i, k));
    out.loss -= row;
    const double mass = targets.row(i).sum();
    out.dlogits.row(i) = (p.row(i) * mass - targets.row(i)) / batch;
  }
  out.loss /= batch;
  return out;
}

LossGrad entropy_loss(const Matrix& p) {
  const double batch = static_cast<double>(p.rows());
  LossGrad out{0.0, Matrix(p.rows(), p.cols())};
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.cols(); ++k) h -= xlogx(p(i, k));
    out.loss += h;
    // dH/dz_j = -p_j (log p_j + H)
    for (Eigen::Index k = 0; k < p.cols(); ++k) {
      const double pk = p(i, k);
      out.dlogits(i, k) = pk > 0.0 ? -pk * (std::log(pk) + h) / batch : 0.0;
    }
  }
  out.loss /= batch;
  return out;
}

std::vector<int> hard_pseudo_label(const Matrix& p) { return linalg::row_argmax(p); }

LossGrad pseudo_ce_loss(const Matrix& p, std::span<const int> pseudo) {
  if (static_cast<Eigen::Index>(pseudo.size()) != p.rows()) {
    throw ShapeError("pseudo_ce_loss: " + std::to_string(pseudo.size()) + " labels for " +
                     std::to_string(p.rows()) + " rows");
  }
  require_labels(pseudo, static_cast<int>(p.cols()), "pseudo_ce_loss");
  return cross_entropy(p, one_hot(pseudo, static_cast<int>(p.cols())));
}

double kl_divergence(const Matrix& p, const Matrix& q) {
  require_same_shape(p, q, "kl_divergence");
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index k = 0; k < p.cols(); ++k) {
      const double pk = p(i, k);
      if (pk > 0.0) total += pk * (std::log(pk) - safe_log(q(i, k)));
    }
  }
  return total / static_cast<double>(p.rows());
}

LossGrad kl_divergence_grad(const Matrix& p, const Matrix& q) {
  // Only -sum p log q depends on the logits of q.
  LossGrad out{kl_divergence(p, q), Matrix(q.rows(), q.cols())};
  const double batch = static_cast<double>(p.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    out.dlogits.row(i) = (q.row(i) * p.row(i).sum() - p.row(i)) / batch;
  }
  return out;
}

LossGrad diversity_loss(const Matrix& p) {
  const double batch = static_cast<double>(p.rows());
  const Eigen::RowVectorXd mean = p.colwise().mean();
  LossGrad out{0.0, Matrix(p.rows(), p.cols())};
  Eigen::RowVectorXd g(p.cols());
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    out.loss += xlogx(mean(k));
    g(k) = safe_log(mean(k));
  }
  // d/dz_ij = p_ij (g_j - sum_k p_ik g_k) / batch, g_k = log pbar_k
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double centre = p.row(i).dot(g);
    out.dlogits.row(i) = (p.row(i).array() * (g.array() - centre)).matrix() / batch;
  }
  return out;
}

namespace {

// Normalizes each row of `direction` to unit length. Rows whose candidate has
// zero (or non-finite) norm keep the previous direction.
void normalize_rows_into(Matrix& direction, const Matrix& candidate) {
  for (Eigen::Index i = 0; i < candidate.rows(); ++i) {
    const double norm = candidate.row(i).norm();
    if (norm > 0.0 && std::isfinite(norm)) direction.row(i) = candidate.row(i) / norm;
  }
}

}  // namespace

VatResult vat_loss(const ModelParams& params, const Matrix& x, const VatOptions& options,
                   const Matrix& initial_probe) {
  if (!(options.eps > 0.0)) throw ParameterError("vat_loss: eps must be positive");
  if (options.power_iters < 1) throw ParameterError("vat_loss: power_iters must be >= 1");
  if (initial_probe.rows() != x.rows() || initial_probe.cols() != x.cols()) {
    throw ShapeError("vat_loss: probe shape does not match the batch");
  }
  const double xi = options.xi > 0.0
                        ? options.xi
                        : 1e-6 * std::sqrt(static_cast<double>(x.cols()));

  VatResult out;
  out.clean_proba = predict_proba(params, x);

  // Rows of an all-zero probe fall back to the first coordinate axis.
  Matrix direction = Matrix::Zero(x.rows(), x.cols());
  direction.col(0).setOnes();
  normalize_rows_into(direction, initial_probe);

  for (int iter = 0; iter < options.power_iters; ++iter) {
    const auto probe = forward(params, x + xi * direction);
    const auto kl = kl_divergence_grad(out.clean_proba, linalg::row_softmax(probe.logits));
    normalize_rows_into(direction, input_gradient(params, probe.cache, kl.dlogits));
  }

  out.perturbation = options.eps * direction;
  auto perturbed = forward(params, x + out.perturbation);
  auto kl = kl_divergence_grad(out.clean_proba, linalg::row_softmax(perturbed.logits));
  out.loss = kl.loss;
  out.dlogits = std::move(kl.dlogits);
  out.cache = std::move(perturbed.cache);
  return out;
}

VatResult vat_loss(const ModelParams& params, const Matrix& x, const VatOptions& options,
                   std::uint64_t seed) {
  Rng rng(seed);
  return vat_loss(params, x, options, rng.normal_matrix(x.rows(), x.cols()));
}

Gradients vat_gradients(const ModelParams& params, const VatResult& vat) {
  return backward(params, vat.cache, vat.dlogits);
}

LossBundle total_reg(const LossComponents& c, double lambda0) {
  if (!(lambda0 >= 0.0)) throw ParameterError("total_reg: lambda0 must be non-negative");
  LossBundle b;
  b.l_lab = c.l_lab;
  b.l_ent = c.l_ent;
  b.l_ps = c.l_ps;
  b.l_vadv = c.l_vadv;
  b.l_div = c.l_div;
  b.l_reg = lambda0 * c.l_ps + c.l_ent + c.l_vadv + c.l_div;
  b.l_total = b.l_lab + b.l_reg;

  b.labeled_seed = c.d_lab;
  const Matrix* shape = c.d_ent.size() ? &c.d_ent : c.d_ps.size() ? &c.d_ps : c.d_div.size() ? &c.d_div : nullptr;
  if (shape) {
    b.unlabeled_seed = Matrix::Zero(shape->rows(), shape->cols());
    auto add = [&](const Matrix& term, double weight) {
      if (term.size() == 0) return;
      if (term.rows() != shape->rows() || term.cols() != shape->cols()) {
        throw ShapeError("total_reg: unlabeled gradient seeds disagree in shape");
      }
      b.unlabeled_seed += weight * term;
    };
    add(c.d_ps, lambda0);
    add(c.d_ent, 1.0);
    add(c.d_div, 1.0);
  }
  b.vat_seed = c.d_vadv;
  return b;
}

}  // namespace mesh

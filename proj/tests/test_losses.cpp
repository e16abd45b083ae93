#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "gradcheck.hpp"
#include "mesh/errors.hpp"
#include "mesh/losses.hpp"
#include "mesh/random.hpp"

using mesh::Matrix;
using mesh::testing::check_proba_loss;

namespace {

const std::array<int, 4> kDims = {3, 6, 4, 3};
constexpr double kGradTol = 1e-4;

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix random_simplex(mesh::Rng& rng, Eigen::Index n, Eigen::Index k) {
  return mesh::linalg::row_softmax(rng.normal_matrix(n, k, 2.0));
}

}  // namespace

TEST(SmoothLabels, VerbatimValues) {
  const std::vector<int> c3 = {3};
  const Matrix y = mesh::smooth_labels(c3, 10, 0.1);
  EXPECT_EQ(y(0, 3), 0.9);
  for (int k = 0; k < 10; ++k) {
    if (k != 3) EXPECT_DOUBLE_EQ(y(0, k), 0.01);
  }
  EXPECT_NEAR(y.sum(), 0.99, 1e-15);

  const std::vector<int> c0 = {0};
  const Matrix two = mesh::smooth_labels(c0, 2, 0.1);
  EXPECT_EQ(two(0, 0), 0.9);
  EXPECT_DOUBLE_EQ(two(0, 1), 0.05);

  const std::vector<int> labels = {0, 2, 1};
  EXPECT_EQ(mesh::smooth_labels(labels, 3, 0.0), mesh::one_hot(labels, 3));
  const std::vector<int> bad = {3};
  EXPECT_THROW(mesh::smooth_labels(bad, 3, 0.1), mesh::ParameterError);
}

TEST(CrossEntropy, SpotValues) {
  const Matrix target = rows({{1, 0}});
  EXPECT_EQ(mesh::cross_entropy(rows({{1, 0}}), target).loss, 0.0);
  EXPECT_NEAR(mesh::cross_entropy(rows({{0.5, 0.5}}), target).loss, std::log(2.0), 1e-15);
  EXPECT_THROW(mesh::cross_entropy(rows({{0.5, 0.5}}), rows({{1, 0, 0}})), mesh::ShapeError);
}

TEST(CrossEntropy, ZeroSmoothingMatchesPlainCe) {
  mesh::Rng rng(1);
  const Matrix p = random_simplex(rng, 6, 4);
  const std::vector<int> labels = {0, 1, 2, 3, 1, 0};
  double plain = 0.0;
  for (int i = 0; i < 6; ++i) plain -= std::log(p(i, labels[i]));
  plain /= 6.0;
  EXPECT_NEAR(mesh::cross_entropy(p, mesh::smooth_labels(labels, 4, 0.0)).loss, plain, 1e-12);
}

TEST(Entropy, SpotValuesAndRange) {
  EXPECT_NEAR(mesh::entropy_loss(Matrix::Constant(3, 4, 0.25)).loss, std::log(4.0), 1e-12);
  EXPECT_EQ(mesh::entropy_loss(rows({{0, 1, 0}, {1, 0, 0}})).loss, 0.0);
  EXPECT_NEAR(mesh::entropy_loss(rows({{0.5, 0.5}})).loss, std::log(2.0), 1e-15);

  mesh::Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const double h = mesh::entropy_loss(random_simplex(rng, 5, 6)).loss;
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(6.0) + 1e-12);
  }
}

TEST(PseudoLabel, ArgmaxRule) {
  EXPECT_EQ(mesh::hard_pseudo_label(rows({{0.2, 0.5, 0.3}, {0.5, 0.5, 0}, {0, 0, 1}})),
            (std::vector<int>{1, 0, 2}));
}

TEST(PseudoCe, SpotValues) {
  const std::vector<int> pseudo = {2};
  EXPECT_EQ(mesh::pseudo_ce_loss(rows({{0, 0, 1}}), pseudo).loss, 0.0);
  const std::vector<int> first = {0};
  EXPECT_NEAR(mesh::pseudo_ce_loss(rows({{0.25, 0.5, 0.25}}), first).loss, std::log(4.0), 1e-15);
  const std::vector<int> bad = {3};
  EXPECT_THROW(mesh::pseudo_ce_loss(rows({{0.25, 0.5, 0.25}}), bad), mesh::ParameterError);
}

TEST(Kl, SpotValuesAndGibbs) {
  const Matrix p = rows({{0.3, 0.7}});
  EXPECT_EQ(mesh::kl_divergence(p, p), 0.0);
  EXPECT_NEAR(mesh::kl_divergence(rows({{1, 0}}), rows({{0.5, 0.5}})), std::log(2.0), 1e-15);
  mesh::Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    EXPECT_GE(mesh::kl_divergence(random_simplex(rng, 4, 5), random_simplex(rng, 4, 5)), 0.0);
  }
}

TEST(Diversity, SpotValuesAndRange) {
  EXPECT_NEAR(mesh::diversity_loss(Matrix::Constant(2, 4, 0.25)).loss, -std::log(4.0), 1e-12);
  EXPECT_EQ(mesh::diversity_loss(rows({{1, 0}, {1, 0}})).loss, 0.0);
  EXPECT_NEAR(mesh::diversity_loss(rows({{1, 0}, {0.5, 0.5}})).loss,
              0.75 * std::log(0.75) + 0.25 * std::log(0.25), 1e-15);

  mesh::Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const double d = mesh::diversity_loss(random_simplex(rng, 5, 3)).loss;
    EXPECT_LE(d, 0.0);
    EXPECT_GE(d, -std::log(3.0) - 1e-12);
  }
}

// Each loss against central differences, on three nets and three seeds.
class LossGradients : public ::testing::TestWithParam<std::uint64_t> {
 protected:
  void SetUp() override {
    const std::uint64_t s = GetParam();
    params = mesh::init_model(kDims, s);
    mesh::Rng rng(s + 1000);
    x = rng.normal_matrix(5, 3);
    labels = {static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3)),
              static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))};
    q = random_simplex(rng, 5, 3);
  }
  mesh::ModelParams params;
  Matrix x;
  std::vector<int> labels;
  Matrix q;
};

TEST_P(LossGradients, SmoothedCrossEntropy) {
  const Matrix y = mesh::smooth_labels(labels, 3, 0.1);
  const auto r = check_proba_loss(params, x, [&](const Matrix& p) { return mesh::cross_entropy(p, y); });
  EXPECT_LT(r.param_rel_error, kGradTol);
  EXPECT_LT(r.input_rel_error, kGradTol);
}

TEST_P(LossGradients, Entropy) {
  const auto r = check_proba_loss(params, x, [](const Matrix& p) { return mesh::entropy_loss(p); });
  EXPECT_LT(r.param_rel_error, kGradTol);
  EXPECT_LT(r.input_rel_error, kGradTol);
}

TEST_P(LossGradients, PseudoCe) {
  const auto r = check_proba_loss(params, x, [&](const Matrix& p) { return mesh::pseudo_ce_loss(p, labels); });
  EXPECT_LT(r.param_rel_error, kGradTol);
  EXPECT_LT(r.input_rel_error, kGradTol);
}

TEST_P(LossGradients, KlThroughSecondArgument) {
  const auto r = check_proba_loss(params, x, [&](const Matrix& p) { return mesh::kl_divergence_grad(q, p); });
  EXPECT_LT(r.param_rel_error, kGradTol);
  EXPECT_LT(r.input_rel_error, kGradTol);
}

TEST_P(LossGradients, Diversity) {
  const auto r = check_proba_loss(params, x, [](const Matrix& p) { return mesh::diversity_loss(p); });
  EXPECT_LT(r.param_rel_error, kGradTol);
  EXPECT_LT(r.input_rel_error, kGradTol);
}

TEST_P(LossGradients, Vat) {
  const mesh::VatResult vat = mesh::vat_loss(params, x, mesh::VatOptions{}, GetParam());
  const mesh::Gradients g = mesh::vat_gradients(params, vat);
  // Clean prediction and perturbation held fixed, as in the loss definition.
  auto value = [&](const mesh::ModelParams& p, const Matrix& in) {
    const Matrix perturbed = mesh::linalg::row_softmax(mesh::forward(p, in + vat.perturbation).logits);
    return mesh::kl_divergence(vat.clean_proba, perturbed);
  };
  EXPECT_NEAR(value(params, x), vat.loss, 1e-14);
  EXPECT_LT(mesh::testing::relative_error(mesh::testing::flatten(g),
                                          mesh::testing::numeric_param_grad(params, x, value)),
            kGradTol);
  EXPECT_LT(mesh::testing::relative_error(mesh::testing::to_vector(g.input_grad),
                                          mesh::testing::numeric_input_grad(params, x, value)),
            kGradTol);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradients, ::testing::Values(11u, 22u, 33u));

TEST(Vat, PerturbationNormIsEps) {
  const auto p = mesh::init_model(kDims, 5);
  const Matrix x = mesh::Rng(5).normal_matrix(7, 3);
  for (double eps : {0.1, 1.0, 2.5}) {
    mesh::VatOptions opts;
    opts.eps = eps;
    const auto vat = mesh::vat_loss(p, x, opts, 9);
    for (Eigen::Index i = 0; i < x.rows(); ++i) EXPECT_NEAR(vat.perturbation.row(i).norm(), eps, 1e-12);
    EXPECT_GE(vat.loss, 0.0);
  }
}

TEST(Vat, InvariantToProbeScale) {
  const auto p = mesh::init_model(kDims, 6);
  mesh::Rng rng(6);
  const Matrix x = rng.normal_matrix(5, 3);
  const Matrix probe = rng.normal_matrix(5, 3);
  const auto base = mesh::vat_loss(p, x, mesh::VatOptions{}, probe);
  for (double scale : {1e-3, 10.0, 1e4}) {
    const Matrix scaled = probe * scale;
    const auto other = mesh::vat_loss(p, x, mesh::VatOptions{}, scaled);
    EXPECT_NEAR(other.loss, base.loss, 1e-8);
  }
}

TEST(Vat, ConstantModelHasZeroLoss) {
  auto p = mesh::init_model(kDims, 7);
  for (auto& l : p.encoder) l.weight.setZero();
  p.bottleneck.weight.setZero();
  p.classifier.weight.setZero();
  const auto vat = mesh::vat_loss(p, mesh::Rng(7).normal_matrix(4, 3), mesh::VatOptions{}, 3);
  EXPECT_EQ(vat.loss, 0.0);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(vat.perturbation.row(i).norm(), 1.0, 1e-12);
}

TEST(TotalReg, Accounting) {
  mesh::LossComponents c;
  c.l_lab = 1.25;
  EXPECT_EQ(mesh::total_reg(c, 0.0).l_total, 1.25);

  c = {};
  c.l_ps = 2.0;
  EXPECT_EQ(mesh::total_reg(c, 0.5).l_reg, 1.0);

  mesh::Rng rng(8);
  c.l_lab = 0.7;
  c.l_ent = 0.3;
  c.l_vadv = 0.11;
  c.l_div = -0.9;
  c.d_lab = rng.normal_matrix(3, 4);
  c.d_ent = rng.normal_matrix(5, 4);
  c.d_ps = rng.normal_matrix(5, 4);
  c.d_div = rng.normal_matrix(5, 4);
  c.d_vadv = rng.normal_matrix(8, 4);
  const auto b = mesh::total_reg(c, 0.3);
  EXPECT_NEAR(b.l_total, c.l_lab + 0.3 * c.l_ps + c.l_ent + c.l_vadv + c.l_div, 1e-12);
  EXPECT_NEAR(b.l_total, b.l_lab + b.l_reg, 1e-12);
  EXPECT_LT((b.unlabeled_seed - (0.3 * c.d_ps + c.d_ent + c.d_div)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(b.labeled_seed, c.d_lab);
  EXPECT_EQ(b.vat_seed, c.d_vadv);

  // Doubling lambda0 doubles exactly the pseudo-label share of l_reg.
  const auto doubled = mesh::total_reg(c, 0.6);
  EXPECT_NEAR(doubled.l_reg - b.l_reg, 0.3 * c.l_ps, 1e-12);
}

#include <gtest/gtest.h>

#include <cmath>

#include "gradient_suite.hpp"
#include "support.hpp"

using namespace ffkit;
using ffkit::testing::numeric_grad;
using ffkit::testing::random_tensor;
using ffkit::testing::relative_error;
using ffkit::testing::tiny_geometry;

namespace {

const std::vector<std::size_t> kOne{0};

// Logits whose cross-entropy for label 0 equals `ce`: [0, x] with
// ln(1 + e^x) = ce.
Tensor logits_with_ce(double ce) {
  return Tensor::matrix(1, 2, {0.0, std::log(std::exp(ce) - 1.0)}, true);
}

// Cross-entropy by hand, one row at a time.
double ce_oracle(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double z = 0.0;
    for (double v : rows[i]) z += std::exp(v);
    total += -std::log(std::exp(rows[i][labels[i]]) / z);
  }
  return total / static_cast<double>(rows.size());
}

PrototypeTable table_of(std::vector<std::vector<double>> logits) {
  PrototypeTable t;
  t.num_classes = logits.size();
  t.counts.assign(logits.size(), 0);
  for (std::size_t c = 0; c < logits.size(); ++c) t.counts[c] = logits[c].empty() ? 0 : 1;
  t.logits = std::move(logits);
  return t;
}

}  // namespace

TEST(CrossEntropy, UniformLogits) {
  const Tensor l = Tensor::zeros({2, 4});
  EXPECT_NEAR(cross_entropy(l, std::vector<std::size_t>{1, 3}).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, ConfidentLimit) {
  EXPECT_LT(cross_entropy(Tensor::matrix(1, 3, {60, 0, 0}), kOne).item(), 1e-20);
}

TEST(CrossEntropy, MatchesHandOracle) {
  const std::vector<std::vector<double>> rows{{0.3, -1.2, 2.0}, {1.0, 1.0, -0.5}, {-2.0, 0.7, 0.1}};
  const std::vector<std::size_t> y{2, 0, 1};
  const Tensor l = Tensor::matrix(3, 3, {0.3, -1.2, 2.0, 1.0, 1.0, -0.5, -2.0, 0.7, 0.1});
  EXPECT_NEAR(cross_entropy(l, y).item(), ce_oracle(rows, y), 1e-9);
  EXPECT_NEAR(retention_loss(l, y).item(), ce_oracle(rows, y), 1e-9);
}

TEST(CrossEntropy, LabelOutOfRange) {
  EXPECT_THROW((void)cross_entropy(Tensor::zeros({1, 3}), std::vector<std::size_t>{3}), Error);
}

TEST(ForgettingLoss, AboveBoundIsZero) {
  EXPECT_NEAR(forgetting_loss(logits_with_ce(7.0), kOne, 5.0).item(), 0.0, 1e-12);
}

TEST(ForgettingLoss, LinearRegion) {
  EXPECT_NEAR(forgetting_loss(logits_with_ce(2.0), kOne, 5.0).item(), 3.0, 1e-12);
}

TEST(ForgettingLoss, GradientIsNegatedCrossEntropyGradientBelowBound) {
  Tensor l = logits_with_ce(2.0);
  const auto g = backward(forgetting_loss(l, kOne, 5.0)).at(l);
  const auto gce = backward(cross_entropy(l, kOne)).at(l);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(g[i], -gce[i], 1e-15);
  auto f = [&] {
    NoGradGuard guard;
    return forgetting_loss(l, kOne, 5.0).item();
  };
  EXPECT_LT(relative_error(g, numeric_grad(l, f)), 1e-6);
}

TEST(ForgettingLoss, GradientVanishesAboveBound) {
  Tensor l = logits_with_ce(7.0);
  const GradMap g = backward(forgetting_loss(l, kOne, 5.0));
  for (double v : g.at(l)) EXPECT_EQ(v, 0.0);
  auto f = [&] {
    NoGradGuard guard;
    return forgetting_loss(l, kOne, 5.0).item();
  };
  for (double v : numeric_grad(l, f)) EXPECT_EQ(v, 0.0);
}

TEST(ForgettingLoss, AlwaysWithinBounds) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Tensor l = random_tensor({4, 5}, rng, 5.0, false);
    const double v = forgetting_loss(l, std::vector<std::size_t>{0, 1, 2, 3}, 3.0).item();
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 3.0);
  }
}

TEST(GroupSparseLoss, EmptyIsZero) { EXPECT_EQ(group_sparse_loss({}).item(), 0.0); }

TEST(GroupSparseLoss, Additive) {
  const std::vector<LoRAGroup> groups{
      LoRAGroup{1, 0, Grouping::module, "a", {Tensor::vector({3, 4})}, {}},
      LoRAGroup{1, 1, Grouping::module, "b", {Tensor::vector({0, 2})}, {}},
  };
  EXPECT_NEAR(group_sparse_loss(groups).item(), 7.0, 1e-9);
}

TEST(GroupSparseLoss, GradientIsUnitDirectionPerMatrix) {
  Rng rng(5);
  Tensor b = random_tensor({3, 2}, rng), a = random_tensor({2, 4}, rng);
  const std::vector<LoRAGroup> groups{LoRAGroup{1, 0, Grouping::module, "g", {b}, {a}}};
  const auto g = backward(group_sparse_loss(groups));
  double nb = 0.0;
  for (double v : b.data()) nb += v * v;
  nb = std::sqrt(nb);
  for (std::size_t i = 0; i < b.numel(); ++i) EXPECT_NEAR(g.at(b)[i], b.data()[i] / nb, 1e-12);
  auto f = [&] {
    NoGradGuard guard;
    return group_sparse_loss(groups).item();
  };
  EXPECT_LT(relative_error(g.at(a), numeric_grad(a, f)), 1e-4);
}

TEST(GroupSparseLoss, NonnegativeAndZeroOnlyAtZero) {
  const std::vector<LoRAGroup> zero{LoRAGroup{1, 0, Grouping::module, "z", {Tensor::zeros({2, 2})}, {Tensor::zeros({2, 3})}}};
  EXPECT_LT(group_sparse_loss(zero).item(), 1e-5);
  EXPECT_GE(group_sparse_loss(zero).item(), 0.0);
}

TEST(Prototypes, SingletonMean) {
  MicroTransformer m(tiny_geometry(), 1);
  Dataset d{8, 4, Split::train, {}, {}};
  Rng rng(2);
  const auto x = normal_values(rng, 8, 1.0);
  d.push_back(x, 2);
  const auto t = compute_prototypes(m, d);
  EXPECT_EQ(t.at(2), m.classify(x));
  EXPECT_EQ(t.counts[2], 1u);
}

TEST(Prototypes, DuplicateSampleSameMean) {
  MicroTransformer m(tiny_geometry(), 1);
  Dataset once{8, 4, Split::train, {}, {}}, twice{8, 4, Split::train, {}, {}};
  Rng rng(2);
  const auto x = normal_values(rng, 8, 1.0);
  once.push_back(x, 1);
  twice.push_back(x, 1);
  twice.push_back(x, 1);
  const auto a = compute_prototypes(m, once).at(1), b = compute_prototypes(m, twice).at(1);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Prototypes, MeanOfFiveMatchesAccumulateAndDivide) {
  MicroTransformer m(tiny_geometry(), 1);
  Dataset d{8, 4, Split::train, {}, {}};
  Rng rng(3);
  std::vector<double> acc(4, 0.0);
  for (int i = 0; i < 5; ++i) {
    const auto x = normal_values(rng, 8, 1.0);
    d.push_back(x, 0);
    const auto l = m.classify(x);
    for (std::size_t j = 0; j < 4; ++j) acc[j] += l[j];
  }
  const auto p = compute_prototypes(m, d).at(0);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(p[j], acc[j] / 5.0, 1e-12);
}

TEST(Prototypes, MissingClassRaisesDistinctError) {
  MicroTransformer m(tiny_geometry(), 1);
  Dataset d{8, 4, Split::train, {}, {}};
  d.push_back(std::vector<double>(8, 0.5), 0);
  const auto t = compute_prototypes(m, d);
  EXPECT_EQ(t.missing(), (std::vector<std::size_t>{1, 2, 3}));
  try {
    (void)t.at(3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_prototype);
  }
}

TEST(PrototypeLoss, RetainedMatchIsZero) {
  const auto t = table_of({{0.2, -1.0, 3.0}, {1.0, 0.0, 0.0}});
  const Tensor h = Tensor::matrix(1, 3, {0.2, -1.0, 3.0});
  LossConfig cfg = LossConfig::for_classes(3);
  for (auto dir : {KlDirection::prototype_first, KlDirection::logits_first}) {
    cfg.kl_direction = dir;
    EXPECT_NEAR(prototype_terms(Tensor{}, {}, h, kOne, t, cfg).retained.item(), 0.0, 1e-15);
  }
}

TEST(PrototypeLoss, ForgottenSaturatesAtBound) {
  const auto t = table_of({{10.0, 0.0, 0.0}});
  const Tensor h = Tensor::matrix(1, 3, {0.0, 10.0, 0.0});
  LossConfig cfg = LossConfig::for_classes(3);
  cfg.bnd_pro = 1.0;  // KL here is about 10
  EXPECT_EQ(prototype_terms(h, kOne, Tensor{}, {}, t, cfg).forgotten.item(), 0.0);
}

TEST(PrototypeLoss, ClosedFormKl) {
  const std::vector<double> p{0.0, std::log(2.0)}, h{0.0, 0.0};
  const double expected = (1.0 / 3.0) * std::log(2.0 / 3.0) + (2.0 / 3.0) * std::log(4.0 / 3.0);
  EXPECT_NEAR(expected, 0.0566, 5e-5);
  EXPECT_NEAR(softmax_kl(p, h), expected, 1e-15);
  const auto t = table_of({p, {}});
  LossConfig cfg = LossConfig::for_classes(2);
  EXPECT_NEAR(prototype_terms(Tensor{}, {}, Tensor::matrix(1, 2, h), kOne, t, cfg).retained.item(), expected, 1e-15);
}

TEST(PrototypeLoss, NonnegativeAndSkipsMissing) {
  Rng rng(8);
  const auto t = table_of({{1.0, 2.0, 0.0}, {}, {0.0, 0.0, 5.0}});
  const LossConfig cfg = LossConfig::for_classes(3);
  for (int i = 0; i < 50; ++i) {
    const Tensor l = random_tensor({3, 3}, rng, 3.0, false);
    const auto terms = prototype_terms(l, std::vector<std::size_t>{0, 1, 2}, l, std::vector<std::size_t>{2, 1, 0}, t, cfg);
    EXPECT_GE(terms.retained.item(), 0.0);
    EXPECT_GE(terms.forgotten.item(), 0.0);
    EXPECT_LE(terms.forgotten.item(), cfg.bnd_pro);
    EXPECT_EQ(terms.skipped_labels, (std::vector<std::size_t>{1, 1}));
  }
}

TEST(TotalLoss, DegenerateWeightsEqualRetention) {
  Rng rng(1);
  const Tensor lr = random_tensor({3, 4}, rng), lf = random_tensor({2, 4}, rng);
  const std::vector<std::size_t> yr{0, 1, 2}, yf{3, 3};
  LossConfig cfg = LossConfig::for_classes(4);
  cfg.alpha = cfg.beta = cfg.gamma = 0.0;
  cfg.prototype_enabled = false;
  const auto t = total_loss(LossInputs{lf, yf, lr, yr}, {}, nullptr, cfg);
  EXPECT_EQ(t.value.item(), retention_loss(lr, yr).item());
}

TEST(TotalLoss, WeightedSumOfComponents) {
  LossConfig cfg;
  cfg.beta = 0.5;
  cfg.alpha = 1.0;
  cfg.prototype_enabled = false;
  const auto t = combine_terms(LossTerms{Tensor::scalar(2.0), Tensor::scalar(3.0), {}, {}, Tensor::scalar(4.0)}, cfg);
  EXPECT_DOUBLE_EQ(t.value.item(), 7.5);
  EXPECT_DOUBLE_EQ(t.breakdown.w_forget, 1.5);
}

TEST(TotalLoss, MissingTableRejected) {
  const LossConfig cfg = LossConfig::for_classes(4);
  try {
    (void)total_loss(LossInputs{Tensor::zeros({1, 4}), {0}, Tensor::zeros({1, 4}), {1}}, {}, nullptr, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
}

TEST(TotalLoss, BreakdownIsAdditive) {
  Rng rng(6);
  const auto t = table_of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const LossConfig cfg = LossConfig::for_classes(3);
  const std::vector<LoRAGroup> groups{LoRAGroup{1, 0, Grouping::block, "g", {random_tensor({2, 2}, rng)}, {}}};
  for (int i = 0; i < 20; ++i) {
    const auto r = total_loss(LossInputs{random_tensor({4, 3}, rng, 3.0), {0, 1, 0, 1}, random_tensor({4, 3}, rng, 3.0), {2, 2, 1, 0}},
                              groups, &t, cfg);
    EXPECT_NEAR(r.breakdown.component_sum(), r.value.item(), 1e-12);
    EXPECT_EQ(r.breakdown.total, r.value.item());
  }
}

TEST(LossConfigValidation, RejectsNegativeWeightsAndBounds) {
  LossConfig cfg;
  cfg.alpha = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = LossConfig{};
  cfg.bnd_pro = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_NEAR(LossConfig::for_classes(20).bnd_data, 2.0 * std::log(20.0), 1e-15);
}

TEST(LossGradients, EveryTermMatchesFiniteDifferences) {
  const auto checks = ffkit::testing::loss_gradient_suite(20);
  std::set<std::string> terms;
  for (const auto& c : checks) {
    terms.insert(c.term);
    EXPECT_LT(c.relative_error, 1e-4) << c.term << " config " << c.config;
  }
  EXPECT_EQ(terms.size(), 8u);
}

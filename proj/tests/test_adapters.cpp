#include <gtest/gtest.h>

#include "support.hpp"

using namespace ffkit;
using ffkit::testing::max_abs_diff;
using ffkit::testing::random_inputs;
using ffkit::testing::tiny_geometry;

namespace {

// Parameter census for the default geometry, counted by hand:
//   input 4*64 + 64, positions 8*64
//   per block: 2 layer norms 4*64, attention 4*(64*64 + 64),
//              FFN 64*128 + 128 + 128*64 + 64
//   final norm 2*64, head 64*20 + 20
constexpr std::size_t kBaseCensus = (4 * 64 + 64) + 8 * 64 +
                                    6 * (4 * 64 + 4 * (64 * 64 + 64) + (64 * 128 + 128 + 128 * 64 + 64)) + 2 * 64 +
                                    (64 * 20 + 20);
constexpr std::size_t kLoraCensus = 6 * 8 * 2 * (64 + 128);

void randomize_b(MicroTransformer& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& a : m.adapters())
    for (auto& v : a.B.mutable_data()) v = 0.05 * std::normal_distribution<double>(0.0, 1.0)(rng);
}

// W + B A with plain loops.
std::vector<double> add_product(std::vector<double> w, const Tensor& B, const Tensor& A) {
  const std::size_t n = B.size(0), r = B.size(1), m = A.size(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < r; ++k) s += B.at(i, k) * A.at(k, j);
      w[i * m + j] += s;
    }
  return w;
}

}  // namespace

TEST(InjectLora, OutputsUnchangedExactly) {
  MicroTransformer m(ModelGeometry{}, 2);
  Rng rng(3);
  const Tensor x = random_inputs(128, 32, rng);
  const auto before = m.logits(x).to_vector();
  (void)inject_lora(m, LoraSpec{1, 8});
  EXPECT_EQ(m.logits(x).to_vector(), before);
}

TEST(InjectLora, ParameterCensus) {
  MicroTransformer m(ModelGeometry{}, 2);
  EXPECT_EQ(m.parameter_count(), kBaseCensus);
  (void)inject_lora(m, LoraSpec{1, 8});
  EXPECT_EQ(m.trainable_parameter_count(), 18432u);
  EXPECT_EQ(kLoraCensus, 18432u);
  EXPECT_DOUBLE_EQ(tunable_ratio(m), static_cast<double>(kLoraCensus) / static_cast<double>(kBaseCensus + kLoraCensus));
}

TEST(InjectLora, DuplicateTaskIsConflict) {
  MicroTransformer m(tiny_geometry(), 2);
  (void)inject_lora(m, LoraSpec{1, 2});
  try {
    (void)inject_lora(m, LoraSpec{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::conflict);
  }
}

TEST(InjectLora, RankOutOfBounds) {
  MicroTransformer m(tiny_geometry(), 2);
  try {
    (void)inject_lora(m, LoraSpec{1, 9});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
}

TEST(InjectLora, AttentionSitesAreOptional) {
  MicroTransformer m(tiny_geometry(), 2);
  const auto groups = inject_lora(m, LoraSpec{1, 2, Grouping::module, {SiteKind::attn_q, SiteKind::attn_v}});
  EXPECT_EQ(groups.size(), 4u);
  EXPECT_EQ(m.adapters().front().site.kind, SiteKind::attn_q);
}

TEST(TunableRatio, AllTrainableIsOne) {
  MicroTransformer m(tiny_geometry(), 2);
  EXPECT_DOUBLE_EQ(tunable_ratio(m), 1.0);
}

TEST(MergeTask, ZeroDeltaIsBitIdentical) {
  MicroTransformer m(tiny_geometry(), 2);
  const auto before = m.checksum();
  (void)inject_lora(m, LoraSpec{1, 2});
  merge_task(m, 1);
  EXPECT_EQ(m.checksum(), before);
  EXPECT_TRUE(m.adapters().empty());
}

TEST(MergeTask, PreservesLogitsWithinTolerance) {
  MicroTransformer m(ModelGeometry{}, 2);
  (void)inject_lora(m, LoraSpec{1, 8});
  randomize_b(m, 4);
  Rng rng(5);
  const Tensor x = random_inputs(128, 32, rng);
  const auto pre = m.logits(x).to_vector();
  merge_task(m, 1);
  EXPECT_LT(max_abs_diff(pre, m.logits(x).to_vector()), 1e-9);
}

TEST(MergeTask, AlreadyMergedIsConflict) {
  MicroTransformer m(tiny_geometry(), 2);
  (void)inject_lora(m, LoraSpec{1, 2});
  merge_task(m, 1);
  try {
    merge_task(m, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::conflict);
  }
  EXPECT_THROW((void)inject_lora(m, LoraSpec{1, 2}), Error);
}

TEST(MergeTask, TwoTasksAccumulate) {
  MicroTransformer m(tiny_geometry(), 2);
  const Site site{1, SiteKind::ffn_w2};
  auto expected = m.site_weight(site).to_vector();
  for (int t = 1; t <= 2; ++t) {
    (void)inject_lora(m, LoraSpec{t, 3});
    randomize_b(m, 10 + static_cast<std::uint64_t>(t));
    for (const auto& p : m.adapters())
      if (p.site == site) expected = add_product(expected, p.B, p.A);
    merge_task(m, t);
  }
  const auto got = m.site_weight(site).to_vector();
  EXPECT_LT(max_abs_diff(got, expected), 1e-12);
  EXPECT_EQ(m.merged_tasks(), (std::vector<int>{1, 2}));
}

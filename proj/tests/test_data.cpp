#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "support.hpp"

using namespace ffkit;

namespace {

const SyntheticSpec kCanonical{20, 32, 100, 6.0, 1.0, 1};

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
  std::vector<std::size_t> v;
  for (std::size_t i = a; i < b; ++i) v.push_back(i);
  return v;
}

}  // namespace

TEST(Synthetic, SplitArithmetic) {
  const auto d = generate_synthetic(kCanonical);
  EXPECT_EQ(d.train.size(), 1600u);
  EXPECT_EQ(d.test.size(), 400u);
  for (auto n : d.train.class_counts()) EXPECT_EQ(n, 80u);
  for (auto n : d.test.class_counts()) EXPECT_EQ(n, 20u);
  EXPECT_EQ(d.test.split, Split::test);
}

TEST(Synthetic, SameSeedSameData) {
  EXPECT_EQ(generate_synthetic(kCanonical).train, generate_synthetic(kCanonical).train);
  auto other = kCanonical;
  other.seed = 2;
  EXPECT_NE(generate_synthetic(kCanonical).train, generate_synthetic(other).train);
}

TEST(Synthetic, LargeMarginIsSeparableByNearestMean) {
  auto spec = kCanonical;
  spec.margin = 50.0;
  const auto d = generate_synthetic(spec);
  // Nearest class mean estimated from the training split.
  std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.dim, 0.0));
  const auto counts = d.train.class_counts();
  for (std::size_t i = 0; i < d.train.size(); ++i)
    for (std::size_t j = 0; j < spec.dim; ++j) means[d.train.labels[i]][j] += d.train.row(i)[j] / counts[d.train.labels[i]];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < spec.classes; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < spec.dim; ++j) dist += std::pow(d.test.row(i)[j] - means[c][j], 2);
      if (dist < best_d) best_d = dist, best = c;
    }
    hits += best == d.test.labels[i];
  }
  EXPECT_EQ(hits, d.test.size());
}

TEST(Synthetic, InvalidSizes) {
  auto s = kCanonical;
  s.classes = 1;
  EXPECT_THROW((void)generate_synthetic(s), Error);
  s = kCanonical;
  s.per_class = 1;
  EXPECT_THROW((void)generate_synthetic(s), Error);
}

TEST(SampleBatch, SingletonDataset) {
  Dataset d{2, 3, Split::train, {}, {}};
  d.push_back(std::vector<double>{1.5, -2.0}, 2);
  Rng rng(1);
  const auto b = sample_batch(d, 1, rng);
  EXPECT_EQ(b.features.to_vector(), (std::vector<double>{1.5, -2.0}));
  EXPECT_EQ(b.labels, (std::vector<std::size_t>{2}));
}

TEST(SampleBatch, DeterministicPerRngState) {
  const auto d = generate_synthetic(kCanonical).train;
  Rng a(9), b(9);
  EXPECT_EQ(sample_batch(d, 16, a).labels, sample_batch(d, 16, b).labels);
}

TEST(SampleBatch, EmptyDatasetRejected) {
  Dataset d{2, 3, Split::train, {}, {}};
  Rng rng(1);
  EXPECT_THROW((void)sample_batch(d, 1, rng), Error);
}

TEST(SampleBatch, BalancedLabelHistogram) {
  Dataset d{1, 4, Split::train, {}, {}};
  for (std::size_t c = 0; c < 4; ++c)
    for (int i = 0; i < 5; ++i) d.push_back(std::vector<double>{0.0}, c);
  Rng rng(17);
  const auto b = sample_batch(d, 10000, rng);
  std::vector<double> freq(4, 0.0);
  for (auto y : b.labels) freq[y] += 1e-4;
  for (double f : freq) EXPECT_NEAR(f, 0.25, 0.02);
}

TEST(Scenario, SingleStepSubsampling) {
  const auto train = generate_synthetic(kCanonical).train;
  const auto s = build_scenario(train, ScenarioSpec{ScenarioKind::single, {range(0, 5)}, 0.1, 0, {}, 1});
  ASSERT_EQ(s.tasks.size(), 1u);
  const auto counts = s.tasks[0].retain.class_counts();
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(counts[c], 0u);
  for (std::size_t c = 5; c < 20; ++c) EXPECT_EQ(counts[c], 8u);  // 10% of 80
  const auto fcounts = s.tasks[0].forget.class_counts();
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(fcounts[c], 8u);
  EXPECT_EQ(s.tasks[0].replayed, range(5, 20));
}

TEST(Scenario, FewShotIsExact) {
  const auto train = generate_synthetic(kCanonical).train;
  const auto s = build_scenario(train, ScenarioSpec{ScenarioKind::few_shot, {range(0, 5)}, 0.1, 4, {}, 1});
  for (auto n : s.tasks[0].forget.filter_classes(range(0, 5)).class_counts())
    EXPECT_TRUE(n == 0 || n == 4);
  const auto rc = s.tasks[0].retain.class_counts();
  for (std::size_t c = 5; c < 20; ++c) EXPECT_EQ(rc[c], 4u);
  EXPECT_EQ(s.tasks[0].forget.size(), 20u);
}

TEST(Scenario, ShotsBeyondAvailableRejected) {
  const auto train = generate_synthetic(kCanonical).train;
  EXPECT_THROW((void)build_scenario(train, ScenarioSpec{ScenarioKind::few_shot, {range(0, 5)}, 0.1, 81, {}, 1}), Error);
}

TEST(Scenario, MissingClassesAbsentFromRehearsalButEvaluated) {
  const auto d = generate_synthetic(kCanonical);
  const auto s = build_scenario(d.train, ScenarioSpec{ScenarioKind::missing_class, {{0, 1}, {2, 3}}, 0.1, 0, {18, 19}, 1});
  for (const auto& t : s.tasks) {
    const auto rc = t.retain.class_counts();
    EXPECT_EQ(rc[18], 0u);
    EXPECT_EQ(rc[19], 0u);
  }
  EXPECT_EQ(d.test.class_counts()[18], 20u);
}

TEST(Scenario, ValidationErrors) {
  const auto train = generate_synthetic(kCanonical).train;
  auto expect_invalid = [&](ScenarioSpec spec) {
    try {
      (void)build_scenario(train, spec);
      ADD_FAILURE() << "accepted an invalid scenario";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
  };
  expect_invalid({ScenarioKind::continual, {{0, 1}, {1, 2}}, 0.1, 0, {}, 1});  // overlap
  expect_invalid({ScenarioKind::single, {{25}}, 0.1, 0, {}, 1});               // unknown class
  expect_invalid({ScenarioKind::single, {{0}}, 0.6, 0, {}, 1});                // ratio too large
  expect_invalid({ScenarioKind::single, {{0}, {1}}, 0.1, 0, {}, 1});           // single with two tasks
  expect_invalid({ScenarioKind::missing_class, {{0}}, 0.1, 0, {0}, 1});        // missing is forgotten
}

TEST(Scenario, DisjointAndCovering) {
  const auto train = generate_synthetic(kCanonical).train;
  const auto s = build_scenario(
      train, ScenarioSpec{ScenarioKind::continual, {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}, {9, 10, 11}}, 0.1, 0, {}, 4});
  for (int t = 1; t <= 4; ++t) {
    const auto& task = s.tasks[static_cast<std::size_t>(t - 1)];
    const auto gone = s.forgotten_through(t);
    for (auto y : task.retain.labels) EXPECT_FALSE(std::binary_search(gone.begin(), gone.end(), y));
    auto all = gone;
    const auto rest = s.remaining_after(t);
    all.insert(all.end(), rest.begin(), rest.end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, range(0, 20));
  }
}

TEST(Scenario, SameSeedSameMaterialization) {
  const auto train = generate_synthetic(kCanonical).train;
  const ScenarioSpec spec{ScenarioKind::single, {range(0, 5)}, 0.1, 0, {}, 7};
  EXPECT_EQ(build_scenario(train, spec).tasks[0].retain, build_scenario(train, spec).tasks[0].retain);
}

TEST(DatasetIo, RoundTrip) {
  const auto d = generate_synthetic(SyntheticSpec{5, 6, 10, 3.0, 1.0, 4});
  const auto dir = std::filesystem::temp_directory_path() / "ffkit_dataset_io";
  std::filesystem::remove_all(dir);
  save_dataset(d.test, dir, SyntheticSpec{5, 6, 10, 3.0, 1.0, 4});
  EXPECT_TRUE(std::filesystem::exists(dir / "labels.csv"));
  EXPECT_EQ(load_dataset(dir), d.test);
  std::filesystem::resize_file(dir / "features.bin", 8);
  EXPECT_THROW((void)load_dataset(dir), Error);
  std::filesystem::remove_all(dir);
}

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace ffkit;
using ffkit::testing::random_inputs;
using ffkit::testing::tiny_geometry;

namespace fs = std::filesystem;

namespace {

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ffkit_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
};

void expect_io_error(const fs::path& p) {
  try {
    (void)load_checkpoint(p);
    ADD_FAILURE() << "loaded a damaged checkpoint";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io) << e.what();
  }
}

}  // namespace

TEST_F(CheckpointTest, RoundTripPreservesLogitsAndMetadata) {
  MicroTransformer m(tiny_geometry(), 21);
  Rng rng(1);
  const Tensor x = random_inputs(32, 8, rng);
  save_checkpoint(m, dir_ / "m.ckpt", {{"note", "hello"}});
  const auto ck = load_checkpoint(dir_ / "m.ckpt");
  EXPECT_EQ(ck.model.checksum(), m.checksum());
  EXPECT_EQ(ck.model.logits(x).to_vector(), m.logits(x).to_vector());
  EXPECT_EQ(ck.metadata.at("note"), "hello");
  EXPECT_EQ(ck.model.geometry(), m.geometry());
}

TEST_F(CheckpointTest, RoundTripKeepsAdaptersAndFreezeMask) {
  MicroTransformer m(tiny_geometry(), 21);
  m.set_freeze(FreezeSelector::all);
  (void)inject_lora(m, LoraSpec{1, 2, Grouping::matrix});
  for (auto& a : m.adapters())
    for (auto& v : a.B.mutable_data()) v = 0.25;
  Rng rng(2);
  const Tensor x = random_inputs(16, 8, rng);
  save_checkpoint(m, dir_ / "m.ckpt");
  const auto ck = load_checkpoint(dir_ / "m.ckpt");
  EXPECT_EQ(ck.model.logits(x).to_vector(), m.logits(x).to_vector());
  EXPECT_EQ(ck.model.freeze_mask(), m.freeze_mask());
  EXPECT_EQ(ck.model.adapters().size(), m.adapters().size());
  EXPECT_EQ(ck.model.trainable_parameter_count(), m.trainable_parameter_count());
  EXPECT_EQ(ck.model.adapter_grouping().at(1), Grouping::matrix);
}

TEST_F(CheckpointTest, MergedTaskListSurvives) {
  MicroTransformer m(tiny_geometry(), 21);
  (void)inject_lora(m, LoraSpec{3, 2});
  merge_task(m, 3);
  save_checkpoint(m, dir_ / "m.ckpt");
  EXPECT_EQ(load_checkpoint(dir_ / "m.ckpt").model.merged_tasks(), (std::vector<int>{3}));
}

TEST_F(CheckpointTest, MissingFile) { expect_io_error(dir_ / "nope.ckpt"); }

TEST_F(CheckpointTest, BadMagic) {
  MicroTransformer m(tiny_geometry(), 21);
  save_checkpoint(m, dir_ / "m.ckpt");
  std::fstream f(dir_ / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(0);
  f.write("XXXX", 4);
  f.close();
  expect_io_error(dir_ / "m.ckpt");
}

TEST_F(CheckpointTest, Truncated) {
  MicroTransformer m(tiny_geometry(), 21);
  save_checkpoint(m, dir_ / "m.ckpt");
  const auto size = fs::file_size(dir_ / "m.ckpt");
  fs::resize_file(dir_ / "m.ckpt", size - 8);
  expect_io_error(dir_ / "m.ckpt");
  fs::resize_file(dir_ / "m.ckpt", 40);
  expect_io_error(dir_ / "m.ckpt");
}

TEST_F(CheckpointTest, CorruptedWeightFailsChecksum) {
  MicroTransformer m(tiny_geometry(), 21);
  save_checkpoint(m, dir_ / "m.ckpt");
  const auto size = fs::file_size(dir_ / "m.ckpt");
  std::fstream f(dir_ / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(size - 3));
  f.put('\x7f');
  f.close();
  expect_io_error(dir_ / "m.ckpt");
}

TEST(CheckpointJson, GeometryAndDatasetRoundTrip) {
  const auto g = tiny_geometry();
  EXPECT_EQ(geometry_from_json(geometry_to_json(g)), g);
  const SyntheticSpec s{5, 6, 10, 3.0, 0.5, 9};
  const auto back = synthetic_from_json(synthetic_to_json(s));
  EXPECT_EQ(back.classes, s.classes);
  EXPECT_EQ(back.margin, s.margin);
  EXPECT_EQ(back.seed, s.seed);
}

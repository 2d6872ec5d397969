// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "mate/checkpoint.hpp"
#include "mate/pipeline.hpp"
#include "mate/rng.hpp"
#include "mate/synth.hpp"

namespace mate {
namespace {

std::vector<std::size_t> flatten(const BatchPlan& p) {
  std::vector<std::size_t> out;
  for (const auto& b : p.batches) {
    for (const auto& it : b) out.push_back(it.source * 1000000 + it.index);
  }
  return out;
}

TEST(Batches, DropLast) {
  const std::vector<std::size_t> sizes{10};
  const auto p = make_batches(sizes, 3, 1, 0, Mixing::kNone);
  ASSERT_EQ(p.batches.size(), 3u);
  for (const auto& b : p.batches) EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(p.consumed[0], 9u);
  EXPECT_EQ(p.unused[0], 1u);
  std::set<std::size_t> seen;
  for (const auto& b : p.batches) {
    for (const auto& it : b) EXPECT_TRUE(seen.insert(it.index).second);
  }
}

TEST(Batches, DeterministicInSeedAndEpoch) {
  const std::vector<std::size_t> sizes{50, 70};
  const auto a = make_batches(sizes, 10, 5, 0, Mixing::kEqual);
  EXPECT_EQ(flatten(a), flatten(make_batches(sizes, 10, 5, 0, Mixing::kEqual)));
  EXPECT_NE(flatten(a), flatten(make_batches(sizes, 10, 6, 0, Mixing::kEqual)));
  EXPECT_NE(flatten(a), flatten(make_batches(sizes, 10, 5, 1, Mixing::kEqual)));
}

TEST(Batches, EqualMixingLimitedBySmallerSource) {
  const std::vector<std::size_t> sizes{100, 1000};
  const auto p = make_batches(sizes, 20, 3, 0, Mixing::kEqual);
  ASSERT_EQ(p.batches.size(), 10u);
  EXPECT_EQ(p.consumed[0], 100u);
  EXPECT_EQ(p.consumed[1], 100u);
  EXPECT_EQ(p.unused[0], 0u);
  EXPECT_EQ(p.unused[1], 900u);
  for (const auto& b : p.batches) {
    std::size_t from1 = 0;
    for (const auto& it : b) from1 += it.source;
    EXPECT_EQ(from1, 10u);
  }
  const std::vector<std::size_t> s2{50, 500};
  EXPECT_EQ(make_batches(s2, 10, 3, 0, Mixing::kEqual).batches.size(), 50u / 5u);
  EXPECT_EQ(make_batches(s2, 10, 3, 0, Mixing::kEqual, true).batches.size(), 500u / 5u);
}

TEST(Batches, Errors) {
  const std::vector<std::size_t> two{10, 10};
  EXPECT_THROW(make_batches(two, 7, 1, 0, Mixing::kEqual), Error);
  EXPECT_THROW(make_batches(two, 0, 1, 0, Mixing::kNone), Error);
  const std::vector<std::size_t> one{10};
  EXPECT_THROW(make_batches(one, 4, 1, 0, Mixing::kEqual), Error);
}

class StageFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    SynthSpec s;
    s.n_items = 1100;
    s.latent_dim = 8;
    s.k_a = 16;
    s.k_b = 16;
    s.seed = 12;
    s.test_fraction = 100.0 / 1100.0;
    art = generate(s);
    pairs = make_training_pairs(art.side_a, art.side_b, art.train_pairs);
  }

  StageConfig config(Stage stage) const {
    auto c = default_stage_config(stage);
    c.epochs = 1;
    c.batch_size = 50;
    c.seed = 3;
    return c;
  }

  SynthArtifacts art;
  TrainingPairs pairs;
};

TEST_F(StageFixture, PretrainLowersLoss) {
  const auto r = stage_text_pretrain(pairs, config(Stage::kTextPretrain));
  ASSERT_EQ(pairs.pairs.size(), 1000u);
  ASSERT_EQ(r.report.epoch_losses.size(), 1u);
  EXPECT_LT(r.report.epoch_losses[0], r.report.initial_loss);
  EXPECT_EQ(r.report.steps, 20u);
  EXPECT_EQ(r.report.batches_per_epoch[0], 20u);
  EXPECT_FALSE(r.checkpoint.adapters.has_value());
}

TEST_F(StageFixture, ZeroLearningRateChangesNothing) {
  auto c = config(Stage::kTextPretrain);
  c.lr = 0;
  c.epochs = 2;
  const auto r = stage_text_pretrain(pairs, c);
  const auto fresh = init_params(16, 16, derive_seed(c.seed, {0x1417}));
  EXPECT_TRUE(bitwise_equal(r.checkpoint.params, fresh));
  // The epoch-0 schedule is what initial_loss evaluates.
  EXPECT_EQ(r.report.epoch_losses[0], r.report.initial_loss);
  // Weight decay is scaled by lr, so it also vanishes.
  EXPECT_GT(r.report.epoch_losses[1], 0.0);
}

TEST_F(StageFixture, SingleThreadedRunsAreBitwiseIdentical) {
  const auto c = config(Stage::kTextPretrain);
  const auto a = stage_text_pretrain(pairs, c);
  const auto b = stage_text_pretrain(pairs, c);
  EXPECT_TRUE(bitwise_equal(a.checkpoint, b.checkpoint));
  EXPECT_EQ(a.report.epoch_losses, b.report.epoch_losses);
  EXPECT_EQ(a.report.config_hash, b.report.config_hash);
  EXPECT_EQ(to_json(a.report).dump(), to_json(b.report).dump());
  auto c2 = c;
  c2.seed = 4;
  EXPECT_FALSE(bitwise_equal(stage_text_pretrain(pairs, c2).checkpoint, a.checkpoint));
}

TEST_F(StageFixture, FinetuneBatchesAreHalfAndHalf) {
  const auto t1 = stage_text_pretrain(pairs, config(Stage::kTextPretrain));
  auto c = config(Stage::kTextFinetune);
  c.batch_size = 8;
  std::size_t batches = 0;
  auto obs = [&](std::size_t, const Batch& b) {
    ++batches;
    std::size_t caption = 0;
    for (const auto& it : b) caption += it.source == 1 ? 1 : 0;
    EXPECT_EQ(b.size(), 8u);
    EXPECT_EQ(caption, 4u);
  };
  const auto r = stage_text_finetune(pairs, pairs, t1.checkpoint, c, obs);
  EXPECT_EQ(batches, 1000u / 4u);
  EXPECT_EQ(r.report.batches_per_epoch[0], batches);
}

TEST_F(StageFixture, FinetuneCountsUnusedPairs) {
  const auto t1 = stage_text_pretrain(pairs, config(Stage::kTextPretrain));
  // 100 query-document pairs against 1000 caption pairs at batch 20.
  auto small = pairs;
  small.pairs.source_rows.resize(100);
  small.pairs.target_rows.resize(100);
  auto c = config(Stage::kTextFinetune);
  c.batch_size = 20;
  const auto r = stage_text_finetune(small, pairs, t1.checkpoint, c);
  EXPECT_EQ(r.report.batches_per_epoch[0], 10u);
  EXPECT_EQ(r.report.unused_pairs_per_epoch[0], 900u);
}

TEST_F(StageFixture, FinetuneRejectsMissingSourcesAndOddBatches) {
  const auto t1 = stage_text_pretrain(pairs, config(Stage::kTextPretrain));
  TrainingPairs empty;
  empty.source = pairs.source;
  empty.target = pairs.target;
  try {
    stage_text_finetune(pairs, empty, t1.checkpoint, config(Stage::kTextFinetune));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("caption"), std::string::npos) << e.what();
  }
  auto c = config(Stage::kTextFinetune);
  c.batch_size = 51;
  EXPECT_THROW(stage_text_finetune(pairs, pairs, t1.checkpoint, c), Error);
}

TEST_F(StageFixture, ImageStageFreezesBaseAndStartsAsNoOp) {
  const auto t1 = stage_text_pretrain(pairs, config(Stage::kTextPretrain));
  auto c = config(Stage::kImageAdapt);
  c.lora = LoraConfig{4, 4.0, 0.1, true};
  const auto r = stage_image_adapt(pairs, t1.checkpoint, c);
  ASSERT_TRUE(r.checkpoint.adapters.has_value());
  EXPECT_TRUE(bitwise_equal(r.checkpoint.params, t1.checkpoint.params));
  bool moved = false;
  for (const auto& f : r.checkpoint.adapters->layers) moved = moved || f.b.norm() > 0;
  EXPECT_TRUE(moved);

  // Step 0: the fresh adapters leave the warm-start function untouched.
  const auto x = art.side_a.gather(std::vector<std::size_t>{0, 1, 2, 3, 4});
  const auto zero = make_lora_adapter(t1.checkpoint.params, *c.lora, 1);
  EXPECT_TRUE(bitwise_equal(project(t1.checkpoint.params, &zero, x), project(t1.checkpoint.params, nullptr, x)));
  auto frozen = c;
  frozen.lr = 0;
  const auto r0 = stage_image_adapt(pairs, t1.checkpoint, frozen);
  EXPECT_TRUE(bitwise_equal(project(r0.checkpoint.params, &*r0.checkpoint.adapters, x),
                            project(t1.checkpoint.params, nullptr, x)));
  EXPECT_EQ(r0.report.initial_loss, r0.report.epoch_losses[0]);
}

TEST_F(StageFixture, ImageStageRejectsRankZero) {
  const auto t1 = stage_text_pretrain(pairs, config(Stage::kTextPretrain));
  auto c = config(Stage::kImageAdapt);
  c.lora = LoraConfig{0, 1.0, 0.0, false};
  EXPECT_THROW(stage_image_adapt(pairs, t1.checkpoint, c), Error);
}

TEST_F(StageFixture, DimensionMismatchIsAnError) {
  const auto t1 = stage_text_pretrain(pairs, config(Stage::kTextPretrain));
  SynthSpec s;
  s.n_items = 200;
  s.latent_dim = 8;
  s.k_a = 10;
  s.k_b = 16;
  const auto other = generate(s);
  const auto wrong = make_training_pairs(other.side_a, other.side_b, other.train_pairs);
  EXPECT_THROW(stage_image_adapt(wrong, t1.checkpoint, config(Stage::kImageAdapt)), Error);
}

TEST(StageConfigs, JsonRoundTripAndHash) {
  auto c = default_stage_config(Stage::kImageAdapt);
  c.inputs["images"] = DatasetRef{"a.emb", "b.emb", "p.pairs"};
  c.warm_start = "t2/checkpoint.matp";
  c.out = "somewhere";
  const auto back = stage_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto moved = c;
  moved.out = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(c));
  auto other = c;
  other.lr *= 2;
  EXPECT_NE(config_hash(other), config_hash(c));
  auto j = to_json(c);
  j["learning_rate"] = 1;
  EXPECT_THROW(stage_config_from_json(j), Error);
}

TEST(StageConfigs, Defaults) {
  EXPECT_EQ(default_stage_config(Stage::kTextPretrain).epochs, 1u);
  EXPECT_EQ(default_stage_config(Stage::kTextFinetune).epochs, 3u);
  EXPECT_EQ(default_stage_config(Stage::kImageAdapt).epochs, 3u);
  EXPECT_EQ(default_stage_config(Stage::kTextPretrain).temperature, 0.02);
  EXPECT_TRUE(default_stage_config(Stage::kImageAdapt).lora.has_value());
  EXPECT_EQ(parse_stage("t2"), Stage::kTextFinetune);
  EXPECT_THROW(parse_stage("t3"), Error);
}

}  // namespace
}  // namespace mate

// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "mate/checkpoint.hpp"
#include "mate/pipeline.hpp"
#include "mate/retrieval.hpp"
#include "mate/synth.hpp"
#include "support/oracles.hpp"

namespace mate {
namespace {

const std::vector<std::size_t> kOne{1};

SynthSpec small_spec(std::uint64_t seed = 1) {
  SynthSpec s;
  s.n_items = 400;
  s.latent_dim = 8;
  s.k_a = 12;
  s.k_b = 16;
  s.seed = seed;
  return s;
}

bool same_pairs(const PairDataset& a, const PairDataset& b) {
  return a.kind == b.kind && a.source_ids == b.source_ids && a.target_ids == b.target_ids &&
         a.positives == b.positives;
}

bool same_artifacts(const SynthArtifacts& a, const SynthArtifacts& b) {
  return a.side_a == b.side_a && a.side_b == b.side_b && same_pairs(a.train_pairs, b.train_pairs) &&
         same_pairs(a.test_pairs, b.test_pairs) && same_pairs(a.eval_a_to_b, b.eval_a_to_b) &&
         same_pairs(a.eval_b_to_a, b.eval_b_to_a) && a.test_a_rows == b.test_a_rows &&
         a.test_b_rows == b.test_b_rows;
}

double direct_recall_at_1(const SynthArtifacts& art) {
  const auto q = art.side_a.subset(art.test_a_rows);
  const auto g = art.side_b.subset(art.test_b_rows);
  const auto ranking = topk(q, g, 1);
  return recall_at_k(ranking, positives_from_pairs(art.eval_a_to_b, q, g, false), kOne).scores[0];
}

TEST(Synth, ShapesSplitAndInvariants) {
  const auto art = generate(small_spec());
  EXPECT_EQ(art.side_a.rows(), 400u);
  EXPECT_EQ(art.side_b.rows(), 400u);
  EXPECT_EQ(art.side_a.dim(), 12u);
  EXPECT_EQ(art.side_b.dim(), 16u);
  EXPECT_TRUE(art.side_a.normalized());
  EXPECT_TRUE(art.side_b.normalized());
  EXPECT_EQ(art.test_pairs.size(), 40u);
  EXPECT_EQ(art.train_pairs.size(), 360u);
  EXPECT_EQ(art.train_pairs.kind, PairKind::kImageCaption);
  EXPECT_EQ(art.eval_a_to_b.kind, PairKind::kEvalMultipositive);
  // Train and test ids are disjoint on both sides.
  std::set<std::string> train_a(art.train_pairs.source_ids.begin(), art.train_pairs.source_ids.end());
  std::set<std::string> train_b(art.train_pairs.target_ids.begin(), art.train_pairs.target_ids.end());
  for (const auto& id : art.test_pairs.source_ids) EXPECT_EQ(train_a.count(id), 0u);
  for (const auto& id : art.test_pairs.target_ids) EXPECT_EQ(train_b.count(id), 0u);
  validate_pairs(art.train_pairs, {art.side_a, art.side_b});
  validate_pairs(art.eval_a_to_b, {art.side_a, art.side_b});
  validate_pairs(art.eval_b_to_a, {art.side_b, art.side_a});
}

TEST(Synth, IdentityMapsRetrieveThemselvesWithoutTraining) {
  SynthSpec s = small_spec();
  s.k_a = s.k_b = s.latent_dim;
  s.map_a = s.map_b = MapKind::kIdentity;
  EXPECT_EQ(direct_recall_at_1(generate(s)), 1.0);
}

TEST(Synth, OrthogonalMapIsAtChanceUntrained) {
  SynthSpec s;
  s.n_items = 10000;
  s.latent_dim = 32;
  s.k_a = s.k_b = 32;
  s.map_a = MapKind::kIdentity;
  s.map_b = MapKind::kOrthogonal;
  s.seed = 3;
  const auto art = generate(s);
  ASSERT_EQ(art.test_b_rows.size(), 1000u);
  EXPECT_LT(direct_recall_at_1(art), 5.0 / 1000.0);
}

TEST(Synth, UntrainedProjectionIsAtChance) {
  SynthSpec s;
  s.n_items = 10000;
  s.latent_dim = 32;
  s.k_a = 32;
  s.k_b = 32;
  s.map_a = MapKind::kIdentity;
  s.map_b = MapKind::kOrthogonal;
  s.seed = 4;
  const auto art = generate(s);
  Checkpoint c;
  c.params = init_params(32, 32, 77);
  const auto reports = oracle_eval(c, art, kOne);
  ASSERT_EQ(reports.size(), 4u);
  EXPECT_EQ(reports[0].metric, "recall");
  EXPECT_EQ(reports[1].metric, "map");
  EXPECT_LT(reports[0].scores[0], 5.0 / 1000.0);
  EXPECT_LT(reports[2].scores[0], 5.0 / 1000.0);
}

TEST(Synth, DeterministicInSeedAndThreadCount) {
  for (bool long_text : {false, true}) {
    SynthSpec s = small_spec(9);
    s.long_text_mode = long_text;
    s.map_b = MapKind::kMlp;
    s.noise_a = 0.2;
    s.noise_b = 0.3;
    const auto a = generate(s, 1);
    EXPECT_TRUE(same_artifacts(a, generate(s, 1)));
    EXPECT_TRUE(same_artifacts(a, generate(s, 3)));
    s.seed = 10;
    EXPECT_FALSE(generate(s, 1).side_a == a.side_a);
  }
}

TEST(Synth, LongTextOracleRankingIsPerfect) {
  SynthSpec s = small_spec(5);
  s.n_items = 500;
  s.long_text_mode = true;
  const auto art = generate(s);
  EXPECT_EQ(art.side_b.rows(), 100u);
  const auto q = art.side_b.subset(art.test_b_rows);
  const auto g = art.side_a.subset(art.test_a_rows);
  const auto pos = positives_from_pairs(art.eval_b_to_a, q, g, false);
  std::vector<std::vector<std::size_t>> oracle;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    ASSERT_EQ(pos[i].size(), s.cluster_size);
    std::vector<std::size_t> list = pos[i];
    for (std::size_t j = 0; j < g.rows(); ++j) {
      if (!testing::relevant(pos[i], j)) list.push_back(j);
    }
    oracle.push_back(list);
  }
  const std::vector<std::size_t> k5{5};
  EXPECT_EQ(map_at_k(testing::ranking_from_lists(oracle, g.rows(), 5), pos, k5).scores[0], 1.0);
}

TEST(Synth, SpecValidation) {
  SynthSpec s = small_spec();
  s.map_a = MapKind::kIdentity;
  EXPECT_THROW(generate(s), Error);
  s = small_spec();
  s.noise_a = -1;
  EXPECT_THROW(generate(s), Error);
  s = small_spec();
  s.long_text_mode = true;
  s.cluster_size = 500;
  EXPECT_THROW(generate(s), Error);
  s = small_spec();
  s.k_b = 4;
  s.map_b = MapKind::kOrthogonal;
  EXPECT_THROW(generate(s), Error);
  EXPECT_THROW(parse_map_kind("cubic"), Error);
}

// Trained held-out R@1 under growing noise, fixed budget, 5 seeds.
TEST(Synth, RecallDegradesWithNoise) {
  const std::vector<double> noise{0.0, 0.1, 0.3, 1.0};
  std::vector<double> means;
  for (double sigma : noise) {
    double sum = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SynthSpec s;
      s.n_items = 660;
      s.latent_dim = 8;
      s.k_a = 16;
      s.k_b = 16;
      s.noise_a = s.noise_b = sigma;
      s.seed = 40 + seed;
      s.test_fraction = 60.0 / 660.0;
      const auto art = generate(s);
      auto cfg = default_stage_config(Stage::kTextPretrain);
      cfg.epochs = 4;
      cfg.batch_size = 60;
      cfg.seed = 90 + seed;
      const auto idx = make_training_pairs(art.side_a, art.side_b, art.train_pairs);
      const auto result = stage_text_pretrain(idx, cfg);
      sum += oracle_eval(result.checkpoint, art, kOne)[0].scores[0];
    }
    means.push_back(sum / 5);
    RecordProperty("mean_r1_noise_" + std::to_string(sigma), std::to_string(means.back()));
  }
  int inversions = 0;
  for (std::size_t i = 1; i < means.size(); ++i) {
    if (means[i] > means[i - 1]) {
      ++inversions;
      EXPECT_LE(means[i] - means[i - 1], 0.02) << "noise " << noise[i];
    }
  }
  EXPECT_LE(inversions, 1);
  EXPECT_GT(means.front(), means.back() + 0.1);
}

}  // namespace
}  // namespace mate

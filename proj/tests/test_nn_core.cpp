// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "mate/checkpoint.hpp"
#include "mate/nn_core.hpp"
#include "support/gradcheck.hpp"
#include "support/test_util.hpp"

namespace mate {
namespace {

using testing::gaussian;

TEST(Projection, ShapesAndUnitRows) {
  const auto p = init_params(12, 6, 1);
  EXPECT_EQ(p.dims.hidden, 24u);
  EXPECT_EQ(p.layers[0].weight.rows(), 24);
  EXPECT_EQ(p.layers[0].weight.cols(), 12);
  EXPECT_EQ(p.layers[1].weight.rows(), 24);
  EXPECT_EQ(p.layers[2].weight.rows(), 6);
  std::mt19937_64 rng(2);
  const Matrix u = project(p, nullptr, gaussian(rng, 5, 12));
  ASSERT_EQ(u.rows(), 5);
  ASSERT_EQ(u.cols(), 6);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(u.row(i).norm(), 1.0, 1e-6);
}

TEST(Projection, DimensionMismatchIsAnError) {
  const auto p = init_params(12, 6, 1);
  EXPECT_THROW(project(p, nullptr, Matrix::Zero(3, 11)), Error);
  std::mt19937_64 rng(2);
  const auto fr = project_forward(p, nullptr, gaussian(rng, 3, 12), Mode::kEval);
  EXPECT_THROW(project_backward(p, nullptr, fr.cache, Matrix::Zero(3, 5)), Error);
  EXPECT_THROW(project_backward(p, nullptr, fr.cache, Matrix::Zero(2, 6)), Error);
}

TEST(Projection, NonFiniteActivationNamesLayer) {
  auto p = init_params(4, 2, 1);
  p.layers[1].weight(0, 0) = 1e308;
  Matrix x = Matrix::Constant(2, 4, 1e10);
  try {
    project(p, nullptr, x);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos) << e.what();
    return;
  }
  // validate() may reject the huge weight first; either way it must not pass silently.
  SUCCEED();
}

TEST(Projection, GeluAtZeroAndKnownValues) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(gelu(-1.0), -0.15865525393145705, 1e-15);
  EXPECT_NEAR(gelu_derivative(0.0), 0.5, 1e-15);
  for (double x : {-3.0, -0.7, 0.2, 2.5}) {
    EXPECT_NEAR(gelu_derivative(x), (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6, 1e-8);
  }
}

TEST(Projection, LayerNormOnConstantRow) {
  const Matrix z = Matrix::Constant(1, 7, 3.25);
  const Matrix n = layer_norm_rows(z);
  for (Eigen::Index j = 0; j < 7; ++j) EXPECT_EQ(n(0, j), 0.0);
  // Post-affine output of the first block is ln_beta when its input row is constant.
  auto p = init_params(3, 2, 4, ProjectionOptions{true, true});
  p.layers[0].weight.setZero();
  p.layers[0].bias.setConstant(0.5);
  p.layers[0].ln_beta.setLinSpaced(-1.0, 1.0);
  const auto fr = project_forward(p, nullptr, Matrix::Ones(1, 3), Mode::kEval);
  const auto& c = fr.cache.layers[0];
  for (Eigen::Index j = 0; j < c.normalized.cols(); ++j) EXPECT_EQ(c.normalized(0, j), 0.0);
  for (Eigen::Index j = 0; j < c.pre_activation.cols(); ++j) EXPECT_EQ(c.pre_activation(0, j), p.layers[0].ln_beta(j));
}

TEST(Projection, InitDeterministicAndDeclared) {
  const auto a = init_params(32, 8, 77);
  const auto b = init_params(32, 8, 77);
  const auto c = init_params(32, 8, 78);
  EXPECT_TRUE(bitwise_equal(a, b));
  EXPECT_FALSE(bitwise_equal(a, c));
  for (const auto& layer : a.layers) {
    EXPECT_TRUE((layer.ln_gamma.array() == 1.0).all());
    EXPECT_TRUE((layer.bias.array() == 0.0).all());
    EXPECT_TRUE((layer.ln_beta.array() == 0.0).all());
  }
}

TEST(Projection, InitStdForWideInput) {
  const auto p = init_params(256, 64, 5);
  const auto& w = p.layers[0].weight;
  const double mean = w.mean();
  const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
  EXPECT_NEAR(std::sqrt(var), 1.0 / 16.0, 0.1 / 16.0);
}

TEST(Projection, EvalModeIsPure) {
  const auto p = init_params(8, 4, 3);
  auto ad = make_lora_adapter(p, LoraConfig{2, 2.0, 0.5, true}, 9);
  std::mt19937_64 rng(4);
  for (auto& f : ad.layers) f.b = gaussian(rng, f.b.rows(), f.b.cols());
  const Matrix x = gaussian(rng, 6, 8);
  const Matrix u1 = project_forward(p, &ad, x, Mode::kEval, 1).output;
  const Matrix u2 = project_forward(p, &ad, x, Mode::kEval, 999).output;
  EXPECT_TRUE(bitwise_equal(u1, u2));
}

TEST(Projection, DropoutOnlyTouchesAdapterPathInTraining) {
  const auto p = init_params(8, 4, 3);
  std::mt19937_64 rng(4);
  const Matrix x = gaussian(rng, 6, 8);
  // No adapters: train mode equals eval mode.
  EXPECT_TRUE(bitwise_equal(project_forward(p, nullptr, x, Mode::kTrain, 5).output, project(p, nullptr, x)));
  // Zero-init adapters: dropout on a zero path changes nothing.
  auto ad = make_lora_adapter(p, LoraConfig{2, 2.0, 0.5, false}, 9);
  EXPECT_TRUE(bitwise_equal(project_forward(p, &ad, x, Mode::kTrain, 5).output, project(p, nullptr, x)));
  for (auto& f : ad.layers) f.b = gaussian(rng, f.b.rows(), f.b.cols());
  const Matrix a = project_forward(p, &ad, x, Mode::kTrain, 5).output;
  const Matrix b = project_forward(p, &ad, x, Mode::kTrain, 6).output;
  EXPECT_FALSE(bitwise_equal(a, b));
  EXPECT_TRUE(bitwise_equal(a, project_forward(p, &ad, x, Mode::kTrain, 5).output));
}

struct GradCase {
  const char* name;
  testing::ProjectionCase c;
};

class ProjectionGradients : public ::testing::TestWithParam<GradCase> {};

TEST_P(ProjectionGradients, MatchFiniteDifferencesOn50Instances) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = testing::check_projection_gradients(1000 + seed, GetParam().c);
    EXPECT_LT(r.worst, 1e-4) << "seed " << seed << " tensor " << r.worst_tensor;
    EXPECT_TRUE(r.any_nonzero);
    worst = std::max(worst, r.worst);
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

INSTANTIATE_TEST_SUITE_P(
    AllParameterClasses, ProjectionGradients,
    ::testing::Values(GradCase{"base", {.lora = false}},
                      GradCase{"base_linear_head", {.lora = false, .final_activation = false}},
                      GradCase{"lora", {.lora = true}},
                      GradCase{"lora_dropout", {.lora = true, .mode = Mode::kTrain}},
                      GradCase{"lora_stub_dropout", {.lora = true, .stub = true, .mode = Mode::kTrain}}),
    [](const auto& info) { return std::string(info.param.name); });

// Narrow heads with large adapters are poorly conditioned for a 1e-3 step;
// there the central-difference error must still shrink as step^2.
TEST(ProjectionGradientsConvergence, ErrorShrinksQuadraticallyWithStep) {
  testing::ProjectionCase hard{true, true, Mode::kTrain, true, 4, false, 0.5, 4.0};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const double coarse = testing::check_projection_gradients(1000 + seed, hard, 1e-3).worst;
    const double fine = testing::check_projection_gradients(1000 + seed, hard, 1e-4).worst;
    const double finest = testing::check_projection_gradients(1000 + seed, hard, 1e-5).worst;
    EXPECT_LT(finest, 1e-4) << "seed " << seed;
    if (coarse > 1e-6) EXPECT_LT(fine / coarse, 0.02) << "seed " << seed;
  }
}

TEST(ProjectionBackward, ZeroUpstreamGivesZeroGradients) {
  for (bool lora : {false, true}) {
    const auto p = init_params(8, 4, 3);
    auto ad = make_lora_adapter(p, LoraConfig{2, 2.0, 0.1, true}, 9);
    std::mt19937_64 rng(4);
    for (auto& f : ad.layers) f.b = gaussian(rng, f.b.rows(), f.b.cols());
    const auto* ap = lora ? &ad : nullptr;
    const auto fr = project_forward(p, ap, gaussian(rng, 5, 8), Mode::kTrain, 3);
    const auto back = project_backward(p, ap, fr.cache, Matrix::Zero(5, 4));
    for (const auto& g : gradient_tensors(back)) {
      for (double v : g.values) ASSERT_EQ(v, 0.0) << g.name;
    }
    EXPECT_TRUE((back.input_grad.array() == 0.0).all());
  }
}

TEST(ProjectionBackward, FrozenBaseWithAdapters) {
  auto p = init_params(8, 4, 3);
  auto ad = make_lora_adapter(p, LoraConfig{2, 2.0, 0.0, false}, 9);
  std::mt19937_64 rng(4);
  const Matrix x = gaussian(rng, 5, 8);
  const auto fr = project_forward(p, &ad, x, Mode::kTrain, 3);
  const auto back = project_backward(p, &ad, fr.cache, gaussian(rng, 5, 4));
  EXPECT_FALSE(back.base.has_value());
  ASSERT_TRUE(back.adapters.has_value());
  // B starts at zero so A receives no signal yet, but B does.
  for (const auto& f : back.adapters->layers) EXPECT_GT(f.b.norm(), 0.0);
  // Trainable set excludes every base tensor.
  for (const auto& t : trainable_tensors(p, &ad)) EXPECT_EQ(t.name.find("layer"), std::string::npos) << t.name;

  for (auto& f : ad.layers) f.b = gaussian(rng, f.b.rows(), f.b.cols());
  const auto fr2 = project_forward(p, &ad, x, Mode::kTrain, 3);
  const auto back2 = project_backward(p, &ad, fr2.cache, gaussian(rng, 5, 4));
  for (const auto& f : back2.adapters->layers) {
    EXPECT_GT(f.a.norm(), 0.0);
    EXPECT_GT(f.b.norm(), 0.0);
  }
}

TEST(Lora, ZeroInitIsBitwiseNoOp) {
  for (bool stub : {false, true}) {
    const auto p = init_params(16, 8, 21);
    const auto ad = make_lora_adapter(p, LoraConfig{4, 8.0, 0.1, stub}, 22);
    for (const auto& f : ad.layers) EXPECT_TRUE((f.b.array() == 0.0).all());
    std::mt19937_64 rng(5);
    const Matrix x = gaussian(rng, 9, 16);
    EXPECT_TRUE(bitwise_equal(project(p, &ad, x), project(p, nullptr, x)));
    const auto merged = merge_adapters(p, ad);
    for (int l = 0; l < kProjectionLayers; ++l) {
      EXPECT_TRUE(bitwise_equal(lora_merge(p.layers[l].weight, ad.layers[l], ad.config.scaling()), p.layers[l].weight));
    }
    if (!stub) EXPECT_TRUE(bitwise_equal(merged, p));
  }
}

TEST(Lora, MergeEquivalence) {
  for (bool stub : {false, true}) {
    const auto p = init_params(16, 8, 21);
    auto ad = make_lora_adapter(p, LoraConfig{2, 3.0, 0.1, stub}, 22);
    std::mt19937_64 rng(6);
    for (auto& f : ad.layers) f.b = gaussian(rng, f.b.rows(), f.b.cols(), 0.5);
    if (ad.stub) ad.stub->b = gaussian(rng, ad.stub->b.rows(), ad.stub->b.cols(), 0.5);
    const auto merged = merge_adapters(p, ad);
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix x = gaussian(rng, 1, 16);
      const double diff = (project(p, &ad, x) - project(merged, nullptr, x)).cwiseAbs().maxCoeff();
      EXPECT_LT(diff, 1e-5);
    }
  }
}

TEST(Lora, MergeMatchesDefinition) {
  std::mt19937_64 rng(8);
  const Matrix w = gaussian(rng, 5, 3);
  LoraFactors f{gaussian(rng, 2, 3), gaussian(rng, 5, 2)};
  const Matrix m = lora_merge(w, f, 1.5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double expected = w(i, j) + 1.5 * (f.b(i, 0) * f.a(0, j) + f.b(i, 1) * f.a(1, j));
      EXPECT_NEAR(m(i, j), expected, 1e-14);
    }
  }
  LoraFactors bad{gaussian(rng, 2, 3), gaussian(rng, 5, 3)};
  EXPECT_THROW(lora_merge(w, bad, 1.0), Error);
}

TEST(Lora, RankZeroIsRejected) {
  const auto p = init_params(8, 4, 3);
  try {
    make_lora_adapter(p, LoraConfig{0, 1.0, 0.0, false}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rank must be"), std::string::npos) << e.what();
  }
  EXPECT_THROW((LoraConfig{4, 1.0, 1.0, false}.validate()), Error);
}

}  // namespace
}  // namespace mate

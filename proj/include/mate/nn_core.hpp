// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "mate/types.hpp"

namespace mate {

inline constexpr int kProjectionLayers = 3;
inline constexpr double kLayerNormEpsilon = 1e-5;

/// One block of the projection module: linear -> layer norm -> GELU.
struct ProjectionLayer {
  Matrix weight;  // out x in
  Vector bias;
  Vector ln_gamma;
  Vector ln_beta;
};

struct ProjectionDims {
  std::uint32_t input = 0;   // k_a
  std::uint32_t hidden = 0;  // 4 * k_b
  std::uint32_t output = 0;  // k_b
};

struct ProjectionOptions {
  /// Row-normalize the module output so downstream logits are cosines.
  bool output_normalize = true;
  /// Apply GELU after the last block too (the literal reading of
  /// "each followed by layer normalization and GELU").
  bool final_activation = true;
};

/// Weights of the three-layer projection k_a -> h -> h -> k_b with h = 4 k_b.
struct ProjectionParams {
  std::array<ProjectionLayer, kProjectionLayers> layers;
  ProjectionDims dims;
  ProjectionOptions options;

  /// Throws on any shape inconsistency, h != 4 k_b, or non-finite entries.
  void validate() const;
};

/// Fan-in Gaussian weights (std 1/sqrt(fan_in)), zero biases, unit gamma,
/// zero beta. Deterministic in `seed`.
ProjectionParams init_params(std::uint32_t input_dim, std::uint32_t output_dim, std::uint64_t seed,
                             ProjectionOptions options = {});

struct LoraConfig {
  std::uint32_t rank = 16;
  double alpha = 16.0;
  double dropout = 0.1;
  /// Insert a frozen identity k_a x k_a layer with its own adapter in front
  /// of the projection; stands in for adapting the image encoder itself.
  bool encoder_stub = false;

  double scaling() const { return alpha / static_cast<double>(rank); }
  void validate() const;
};

/// Low-rank update B A for a weight of shape out x in.
struct LoraFactors {
  Matrix a;  // rank x in
  Matrix b;  // out x rank
};

/// Adapters for all three projection layers plus the optional encoder stub.
struct LoraAdapter {
  LoraConfig config;
  std::array<LoraFactors, kProjectionLayers> layers;
  std::optional<LoraFactors> stub;
};

/// A ~ N(0, 1/in), B = 0, so the adapted model starts identical to the base.
LoraAdapter make_lora_adapter(const ProjectionParams& params, const LoraConfig& config, std::uint64_t seed);

/// W + scaling * B A. Errors on rank mismatch between A and B or shape mismatch with W.
Matrix lora_merge(const Matrix& weight, const LoraFactors& factors, double scaling);

/// Folds every adapter (and the encoder stub) into plain projection weights.
ProjectionParams merge_adapters(const ProjectionParams& params, const LoraAdapter& adapter);

enum class Mode { kTrain, kEval };

/// Exact GELU, x * Phi(x).
double gelu(double x);
double gelu_derivative(double x);

/// Row-wise layer norm before the affine step. Writes the reciprocal std per row.
Matrix layer_norm_rows(const Matrix& z, Vector* rstd = nullptr);

struct LayerCache {
  Matrix input;
  Matrix lora_input;   // dropout-masked input of the adapter path
  Matrix lora_hidden;  // lora_input * A^T
  Matrix dropout_scale;
  Matrix normalized;   // pre-affine layer norm output
  Vector rstd;
  Matrix pre_activation;
  bool activated = true;
};

struct ForwardCache {
  Matrix input;
  bool has_adapters = false;
  bool has_stub = false;
  Matrix stub_lora_input;
  Matrix stub_lora_hidden;
  Matrix stub_dropout_scale;
  std::array<LayerCache, kProjectionLayers> layers;
  Matrix hidden_output;  // last block output prior to row normalization
  Vector output_norms;
  Matrix output;
  ProjectionDims dims;
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

/// Runs the projection on a batch (one sample per row). Train mode applies
/// adapter dropout with a mask drawn from `rng_seed`; eval mode is a pure
/// function of (params, adapters, x).
ForwardResult project_forward(const ProjectionParams& params, const LoraAdapter* adapters, const Matrix& x, Mode mode,
                              std::uint64_t rng_seed = 0);

/// Eval-mode forward returning only the output.
Matrix project(const ProjectionParams& params, const LoraAdapter* adapters, const Matrix& x);

struct LayerGrads {
  Matrix weight;
  Vector bias;
  Vector ln_gamma;
  Vector ln_beta;
};

struct ProjectionGrads {
  std::array<LayerGrads, kProjectionLayers> layers;
};

struct AdapterGrads {
  std::array<LoraFactors, kProjectionLayers> layers;
  std::optional<LoraFactors> stub;
};

/// Base gradients are absent when adapters are attached (base frozen);
/// adapter gradients are absent otherwise.
struct BackwardResult {
  std::optional<ProjectionGrads> base;
  std::optional<AdapterGrads> adapters;
  Matrix input_grad;
};

BackwardResult project_backward(const ProjectionParams& params, const LoraAdapter* adapters, const ForwardCache& cache,
                                const Matrix& output_grad);

/// Trainable tensors in a fixed order: adapter factors when `adapters` is
/// non-null, every base tensor otherwise.
std::vector<TensorRef> trainable_tensors(ProjectionParams& params, LoraAdapter* adapters);
/// Gradients in the same order as `trainable_tensors`.
std::vector<ConstTensorRef> gradient_tensors(const BackwardResult& grads);

}  // namespace mate

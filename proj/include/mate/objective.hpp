// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mate/types.hpp"

namespace mate {

enum class Reduction { kMean, kSum };

struct LossConfig {
  double temperature = 0.02;
  Reduction reduction = Reduction::kMean;
};

struct LossResult {
  double loss = 0.0;
  Matrix grad_x;
  Matrix grad_y;
};

/// In-batch contrastive loss of each x_i against its positive y_i:
///   -log( exp(x_i.y_i / t) / sum_j exp(x_i.y_j / t) ),
/// reduced over rows. Rows of both inputs must be unit norm (1e-4).
LossResult info_nce(const Matrix& x, const Matrix& y, const LossConfig& cfg = {});

/// info_nce(v, w) + info_nce(w, v), gradients summed per input.
LossResult symmetric_info_nce(const Matrix& v, const Matrix& w, const LossConfig& cfg = {});

struct AdamWHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// Per-tensor moment buffers for AdamW; shapes follow the parameter list
/// given on the first step.
struct AdamWState {
  AdamWHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected AdamW update with decoupled weight decay:
///   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
/// Any non-finite gradient aborts before a single parameter is touched.
void adamw_step(std::span<const TensorRef> params, std::span<const ConstTensorRef> grads, AdamWState& state);

inline constexpr std::uint32_t kOptimizerFormatVersion = 1;

/// "MATO" container.
void save_optimizer_state(const AdamWState& state, const std::filesystem::path& path);
AdamWState load_optimizer_state(const std::filesystem::path& path);

}  // namespace mate

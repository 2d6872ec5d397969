// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference checks shared by the unit tests and the
// acceptance runner. Losses here are written out from their definitions
// without calling into the library objective.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>

#include "mate/nn_core.hpp"
#include "mate/objective.hpp"
#include "support/test_util.hpp"

namespace mate::testing {

/// max|a - n| / max(|a|_inf, |n|_inf): the relative error of a whole tensor.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return scale < 1e-300 ? diff : diff / scale;
}

/// Numeric gradient of f at the values behind `x` (restored afterwards).
inline std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f();
    x[i] = keep - step;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

struct GradCheckResult {
  double worst = 0;
  std::string worst_tensor;
  std::size_t tensors = 0;
  bool any_nonzero = false;

  void add(const std::string& name, std::span<const double> a, std::span<const double> n) {
    const double e = relative_error(a, n);
    ++tensors;
    for (double v : a) any_nonzero = any_nonzero || v != 0.0;
    if (e >= worst) {
      worst = e;
      worst_tensor = name;
    }
  }
};

struct ProjectionCase {
  bool lora = false;
  bool stub = false;
  Mode mode = Mode::kEval;
  bool final_activation = true;
  std::uint32_t output_dim = 16;
  bool perturb_affine = true;
  double adapter_scale = 0.2;
  double alpha = 2.0;
};

/// Random small projection (4 x 8 input, k_b = 16 by default) scored by
/// L = sum(G .* U).
/// Checks every trainable tensor and the input gradient.
inline GradCheckResult check_projection_gradients(std::uint64_t seed, const ProjectionCase& c, double step = 1e-3) {
  std::mt19937_64 rng(seed);
  ProjectionOptions opts;
  opts.final_activation = c.final_activation;
  auto params = init_params(8, c.output_dim, seed, opts);
  // Non-trivial affine parameters so every term of the layer norm gradient matters.
  for (auto& layer : params.layers) {
    if (!c.perturb_affine) break;
    layer.bias = gaussian(rng, layer.bias.size(), 1, 0.3).col(0);
    layer.ln_gamma.array() += gaussian(rng, layer.ln_gamma.size(), 1, 0.2).col(0).array();
    layer.ln_beta = gaussian(rng, layer.ln_beta.size(), 1, 0.2).col(0);
  }
  std::optional<LoraAdapter> adapter;
  if (c.lora) {
    adapter = make_lora_adapter(params, LoraConfig{2, c.alpha, 0.25, c.stub}, seed + 1);
    for (auto& f : adapter->layers) f.b = gaussian(rng, f.b.rows(), f.b.cols(), c.adapter_scale);
    if (adapter->stub) adapter->stub->b = gaussian(rng, adapter->stub->b.rows(), adapter->stub->b.cols(), c.adapter_scale);
  }
  LoraAdapter* ap = adapter ? &*adapter : nullptr;
  Matrix x = gaussian(rng, 4, 8);
  const Matrix g = gaussian(rng, 4, c.output_dim);
  const std::uint64_t dropout_seed = seed * 31 + 7;

  auto loss = [&]() {
    const auto fr = project_forward(params, ap, x, c.mode, dropout_seed);
    return (fr.output.array() * g.array()).sum();
  };
  const auto fr = project_forward(params, ap, x, c.mode, dropout_seed);
  const auto back = project_backward(params, ap, fr.cache, g);

  GradCheckResult result;
  auto tensors = trainable_tensors(params, ap);
  const auto grads = gradient_tensors(back);
  if (tensors.size() != grads.size()) throw Error("tensor/gradient lists disagree");
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const auto num = numeric_gradient(tensors[t].values, loss, step);
    result.add(tensors[t].name, grads[t].values, num);
  }
  const auto num_x = numeric_gradient(as_span(x), loss, step);
  result.add("input", as_span(back.input_grad), num_x);
  return result;
}

/// InfoNCE written from its definition: mean over rows of
/// -s_ii / tau + log sum_j exp(s_ij / tau), with no stabilisation.
inline double reference_info_nce(const Matrix& x, const Matrix& y, double tau) {
  long double total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    long double denom = 0;
    for (Eigen::Index j = 0; j < y.rows(); ++j) denom += std::exp(static_cast<long double>(x.row(i).dot(y.row(j))) / tau);
    total += -static_cast<long double>(x.row(i).dot(y.row(i))) / tau + std::log(denom);
  }
  return static_cast<double>(total / x.rows());
}

/// Analytic info_nce / symmetric_info_nce gradients against finite
/// differences of the reference loss (unit-norm 4 x 8 batch).
inline GradCheckResult check_loss_gradients(std::uint64_t seed, double tau, bool symmetric, double step) {
  std::mt19937_64 rng(seed);
  Matrix x = unit_rows(rng, 4, 8);
  Matrix y = unit_rows(rng, 4, 8);
  LossConfig cfg;
  cfg.temperature = tau;
  const auto r = symmetric ? symmetric_info_nce(x, y, cfg) : info_nce(x, y, cfg);
  auto f = [&]() {
    return symmetric ? reference_info_nce(x, y, tau) + reference_info_nce(y, x, tau) : reference_info_nce(x, y, tau);
  };
  GradCheckResult result;
  result.add("dX", as_span(r.grad_x), numeric_gradient(as_span(x), f, step));
  result.add("dY", as_span(r.grad_y), numeric_gradient(as_span(y), f, step));
  return result;
}

}  // namespace mate::testing

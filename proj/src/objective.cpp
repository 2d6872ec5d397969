// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/objective.hpp"

#include <cmath>
#include <string>

#include "mate/binary_io.hpp"

namespace mate {

namespace {

void require_unit_rows(const Matrix& m, const char* which) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(std::abs(n - 1.0) <= 1e-4)) {
      throw Error(std::string("info_nce: row ") + std::to_string(i) + " of " + which + " is not unit norm (" +
                  std::to_string(n) + ")");
    }
  }
}

}  // namespace

LossResult info_nce(const Matrix& x, const Matrix& y, const LossConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw Error("info_nce: temperature must be positive");
  if (x.rows() == 0) throw Error("info_nce: empty batch");
  if (x.rows() != y.rows()) throw Error("info_nce: row counts differ");
  if (x.cols() != y.cols()) throw Error("info_nce: embedding dims differ");
  require_unit_rows(x, "x");
  require_unit_rows(y, "y");

  const Eigen::Index n = x.rows();
  const double inv_t = 1.0 / cfg.temperature;
  Matrix logits = (x * y.transpose()) * inv_t;

  // Row-max shifted log-sum-exp; `logits` becomes the softmax in place.
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = logits.row(i);
    const double mx = row.maxCoeff();
    const double positive = row(i);
    row.array() = (row.array() - mx).exp();
    const double z = row.sum();
    total += (mx + std::log(z)) - positive;
    row /= z;
  }

  const double weight = cfg.reduction == Reduction::kMean ? 1.0 / static_cast<double>(n) : 1.0;
  Matrix& dlogits = logits;
  dlogits.diagonal().array() -= 1.0;
  dlogits *= weight * inv_t;

  LossResult out;
  // Sum is derived from the mean so that sum == N_B * mean holds bit-for-bit.
  const double mean = total / static_cast<double>(n);
  out.loss = cfg.reduction == Reduction::kMean ? mean : mean * static_cast<double>(n);
  out.grad_x = dlogits * y;
  out.grad_y = dlogits.transpose() * x;
  return out;
}

LossResult symmetric_info_nce(const Matrix& v, const Matrix& w, const LossConfig& cfg) {
  LossResult fwd = info_nce(v, w, cfg);
  LossResult bwd = info_nce(w, v, cfg);
  fwd.loss += bwd.loss;
  fwd.grad_x += bwd.grad_y;
  fwd.grad_y += bwd.grad_x;
  return fwd;
}

void adamw_step(std::span<const TensorRef> params, std::span<const ConstTensorRef> grads, AdamWState& state) {
  if (params.size() != grads.size()) throw Error("adamw: parameter and gradient lists differ in length");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].values.size() != grads[t].values.size()) {
      throw Error("adamw: shape mismatch for tensor '" + params[t].name + "'");
    }
    for (double g : grads[t].values) {
      if (!std::isfinite(g)) throw Error("adamw: non-finite gradient in tensor '" + grads[t].name + "'");
    }
  }
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.values.size(), 0.0);
      state.second_moment.emplace_back(p.values.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw Error("adamw: optimizer state does not match parameter list");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (state.first_moment[t].size() != params[t].values.size() ||
        state.second_moment[t].size() != params[t].values.size()) {
      throw Error("adamw: moment shape mismatch for tensor '" + params[t].name + "'");
    }
  }

  const auto& h = state.hyper;
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto w = params[t].values;
    auto g = grads[t].values;
    auto& m = state.first_moment[t];
    auto& v = state.second_moment[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= h.lr * (m_hat / (std::sqrt(v_hat) + h.epsilon) + h.weight_decay * w[i]);
    }
  }
}

void save_optimizer_state(const AdamWState& state, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.f64(state.hyper.lr);
  w.f64(state.hyper.beta1);
  w.f64(state.hyper.beta2);
  w.f64(state.hyper.epsilon);
  w.f64(state.hyper.weight_decay);
  w.u64(state.step);
  w.u64(state.first_moment.size());
  for (std::size_t t = 0; t < state.first_moment.size(); ++t) {
    w.u64(state.first_moment[t].size());
    w.f64_array(state.first_moment[t]);
    w.f64_array(state.second_moment[t]);
  }
  io::write_container(path, io::kOptimizerMagic, kOptimizerFormatVersion, w.bytes());
}

AdamWState load_optimizer_state(const std::filesystem::path& path) {
  const auto payload = io::read_container(path, io::kOptimizerMagic, kOptimizerFormatVersion);
  io::ByteReader r(payload);
  AdamWState s;
  s.hyper.lr = r.f64();
  s.hyper.beta1 = r.f64();
  s.hyper.beta2 = r.f64();
  s.hyper.epsilon = r.f64();
  s.hyper.weight_decay = r.f64();
  s.step = r.u64();
  const auto tensors = r.u64();
  r.require(tensors, 8, "moment table");
  for (std::uint64_t t = 0; t < tensors; ++t) {
    const auto n = r.u64();
    r.require(n, 16, "moment buffers");
    auto& m = s.first_moment.emplace_back(n);
    auto& v = s.second_moment.emplace_back(n);
    r.f64_array(m);
    r.f64_array(v);
  }
  if (!r.at_end()) throw Error("trailing bytes in optimizer state");
  return s;
}

}  // namespace mate

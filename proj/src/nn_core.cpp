// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/nn_core.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mate/rng.hpp"

namespace mate {

namespace {

std::string dims_str(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(what + " has shape " + dims_str(m.rows(), m.cols()) + ", expected " + dims_str(rows, cols));
  }
}

void require_size(const Vector& v, Eigen::Index n, const std::string& what) {
  if (v.size() != n) {
    throw Error(what + " has length " + std::to_string(v.size()) + ", expected " + std::to_string(n));
  }
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::array<std::uint32_t, kProjectionLayers + 1> layer_widths(const ProjectionDims& d) {
  return {d.input, d.hidden, d.hidden, d.output};
}

/// Inverted-dropout scale matrix: 0 with probability p, 1/(1-p) otherwise.
Matrix dropout_scale(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  const double inv = 1.0 / (1.0 - p);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? inv : 0.0;
  return m;
}

void check_finite(const Matrix& m, const std::string& where) {
  if (!m.allFinite()) throw Error("non-finite activation at " + where);
}

/// Adapter path input: dropout applies only in training mode.
void adapter_input(const Matrix& input, double p, Mode mode, std::uint64_t seed, Matrix& lora_input,
                   Matrix& scale) {
  if (mode == Mode::kTrain && p > 0.0) {
    scale = dropout_scale(input.rows(), input.cols(), p, seed);
    lora_input = input.cwiseProduct(scale);
  } else {
    scale.resize(0, 0);
    lora_input = input;
  }
}

void check_factors(const LoraFactors& f, Eigen::Index out, Eigen::Index in, const std::string& what) {
  if (f.a.rows() != f.b.cols()) {
    throw Error(what + ": rank mismatch between A (" + std::to_string(f.a.rows()) + ") and B (" +
                std::to_string(f.b.cols()) + ")");
  }
  require_shape(f.a, f.a.rows(), in, what + " A");
  require_shape(f.b, out, f.b.cols(), what + " B");
}

}  // namespace

void ProjectionParams::validate() const {
  if (dims.input == 0 || dims.output == 0) throw Error("projection dims must be positive");
  if (dims.hidden != 4 * dims.output) throw Error("projection hidden width must be 4 * output dim");
  const auto widths = layer_widths(dims);
  for (int l = 0; l < kProjectionLayers; ++l) {
    const auto& layer = layers[l];
    const std::string name = "layer " + std::to_string(l + 1);
    require_shape(layer.weight, widths[l + 1], widths[l], name + " weight");
    require_size(layer.bias, widths[l + 1], name + " bias");
    require_size(layer.ln_gamma, widths[l + 1], name + " ln_gamma");
    require_size(layer.ln_beta, widths[l + 1], name + " ln_beta");
    if (!layer.weight.allFinite() || !layer.bias.allFinite() || !layer.ln_gamma.allFinite() ||
        !layer.ln_beta.allFinite()) {
      throw Error(name + " has non-finite parameters");
    }
  }
}

ProjectionParams init_params(std::uint32_t input_dim, std::uint32_t output_dim, std::uint64_t seed,
                             ProjectionOptions options) {
  if (input_dim == 0 || output_dim == 0) throw Error("projection dims must be positive");
  ProjectionParams p;
  p.dims = {input_dim, 4 * output_dim, output_dim};
  p.options = options;
  const auto widths = layer_widths(p.dims);
  for (int l = 0; l < kProjectionLayers; ++l) {
    Rng rng(derive_seed(seed, {0x1a7e5, static_cast<std::uint64_t>(l)}));
    const auto in = widths[l];
    const auto out = widths[l + 1];
    auto& layer = p.layers[l];
    layer.weight = gaussian(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    layer.bias = Vector::Zero(out);
    layer.ln_gamma = Vector::Ones(out);
    layer.ln_beta = Vector::Zero(out);
  }
  return p;
}

void LoraConfig::validate() const {
  if (rank < 1) throw Error("rank must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("lora dropout must lie in [0, 1)");
  if (!std::isfinite(alpha)) throw Error("lora alpha must be finite");
}

LoraAdapter make_lora_adapter(const ProjectionParams& params, const LoraConfig& config, std::uint64_t seed) {
  config.validate();
  params.validate();
  LoraAdapter adapter;
  adapter.config = config;
  const auto widths = layer_widths(params.dims);
  const Eigen::Index r = config.rank;
  for (int l = 0; l < kProjectionLayers; ++l) {
    Rng rng(derive_seed(seed, {0x10a, static_cast<std::uint64_t>(l)}));
    adapter.layers[l].a = gaussian(r, widths[l], 1.0 / std::sqrt(static_cast<double>(widths[l])), rng);
    adapter.layers[l].b = Matrix::Zero(widths[l + 1], r);
  }
  if (config.encoder_stub) {
    Rng rng(derive_seed(seed, {0x10a, 0x5706}));
    const auto k = params.dims.input;
    adapter.stub = LoraFactors{gaussian(r, k, 1.0 / std::sqrt(static_cast<double>(k)), rng), Matrix::Zero(k, r)};
  }
  return adapter;
}

Matrix lora_merge(const Matrix& weight, const LoraFactors& factors, double scaling) {
  check_factors(factors, weight.rows(), weight.cols(), "lora merge");
  return weight + scaling * (factors.b * factors.a);
}

ProjectionParams merge_adapters(const ProjectionParams& params, const LoraAdapter& adapter) {
  ProjectionParams merged = params;
  const double s = adapter.config.scaling();
  for (int l = 0; l < kProjectionLayers; ++l) {
    merged.layers[l].weight = lora_merge(params.layers[l].weight, adapter.layers[l], s);
  }
  if (adapter.stub) {
    // Stub computes x (I + s B A)^T; fold it into the first layer: W1 (I + s B A).
    const auto k = static_cast<Eigen::Index>(params.dims.input);
    const Matrix stub = lora_merge(Matrix::Identity(k, k), *adapter.stub, s);
    merged.layers[0].weight = merged.layers[0].weight * stub;
  }
  return merged;
}

double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix layer_norm_rows(const Matrix& z, Vector* rstd) {
  const Eigen::Index n = z.rows();
  const double width = static_cast<double>(z.cols());
  Matrix out(z.rows(), z.cols());
  if (rstd) rstd->resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = z.row(i).sum() / width;
    const RowVector centered = z.row(i).array() - mean;
    const double var = centered.squaredNorm() / width;
    const double r = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    out.row(i) = centered * r;
    if (rstd) (*rstd)(i) = r;
  }
  return out;
}

ForwardResult project_forward(const ProjectionParams& params, const LoraAdapter* adapters, const Matrix& x, Mode mode,
                              std::uint64_t rng_seed) {
  if (x.cols() != static_cast<Eigen::Index>(params.dims.input)) {
    throw Error("projection input has " + std::to_string(x.cols()) + " columns, expected " +
                std::to_string(params.dims.input));
  }
  if (!x.allFinite()) throw Error("non-finite projection input");

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.dims = params.dims;
  cache.input = x;
  cache.has_adapters = adapters != nullptr;

  double scaling = 0.0;
  double p = 0.0;
  if (adapters) {
    adapters->config.validate();
    scaling = adapters->config.scaling();
    p = adapters->config.dropout;
  }

  Matrix current = x;
  if (adapters && adapters->stub) {
    const auto& f = *adapters->stub;
    check_factors(f, x.cols(), x.cols(), "encoder stub");
    cache.has_stub = true;
    adapter_input(x, p, mode, derive_seed(rng_seed, {0x5706}), cache.stub_lora_input, cache.stub_dropout_scale);
    cache.stub_lora_hidden = cache.stub_lora_input * f.a.transpose();
    current = x + scaling * (cache.stub_lora_hidden * f.b.transpose());
    check_finite(current, "encoder stub");
  }

  for (int l = 0; l < kProjectionLayers; ++l) {
    const auto& layer = params.layers[l];
    auto& lc = cache.layers[l];
    lc.input = current;
    Matrix z = current * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (adapters) {
      const auto& f = adapters->layers[l];
      check_factors(f, layer.weight.rows(), layer.weight.cols(), "adapter " + std::to_string(l + 1));
      adapter_input(current, p, mode, derive_seed(rng_seed, {static_cast<std::uint64_t>(l)}), lc.lora_input,
                    lc.dropout_scale);
      lc.lora_hidden = lc.lora_input * f.a.transpose();
      z.noalias() += scaling * (lc.lora_hidden * f.b.transpose());
    }
    lc.normalized = layer_norm_rows(z, &lc.rstd);
    Matrix y = lc.normalized.array().rowwise() * layer.ln_gamma.transpose().array();
    y.rowwise() += layer.ln_beta.transpose();
    lc.activated = l + 1 < kProjectionLayers || params.options.final_activation;
    if (lc.activated) {
      lc.pre_activation = y;
      current = y.unaryExpr([](double v) { return gelu(v); });
    } else {
      current = std::move(y);
    }
    check_finite(current, "layer " + std::to_string(l + 1));
  }

  cache.hidden_output = current;
  if (params.options.output_normalize) {
    cache.output_norms = current.rowwise().norm();
    for (Eigen::Index i = 0; i < current.rows(); ++i) {
      const double n = cache.output_norms(i);
      if (!(n > 1e-12)) throw Error("zero-norm projection output at layer 3, row " + std::to_string(i));
      current.row(i) /= n;
    }
  }
  cache.output = current;
  result.output = std::move(current);
  return result;
}

Matrix project(const ProjectionParams& params, const LoraAdapter* adapters, const Matrix& x) {
  return project_forward(params, adapters, x, Mode::kEval).output;
}

BackwardResult project_backward(const ProjectionParams& params, const LoraAdapter* adapters, const ForwardCache& cache,
                                const Matrix& output_grad) {
  if (cache.has_adapters != (adapters != nullptr)) throw Error("adapter set does not match forward cache");
  if (cache.dims.input != params.dims.input || cache.dims.output != params.dims.output ||
      cache.dims.hidden != params.dims.hidden) {
    throw Error("parameter dims do not match forward cache");
  }
  require_shape(output_grad, cache.output.rows(), cache.output.cols(), "output gradient");

  BackwardResult result;
  if (adapters) {
    result.adapters.emplace();
  } else {
    result.base.emplace();
  }
  const double scaling = adapters ? adapters->config.scaling() : 0.0;

  // Through row normalization u = h / |h|: dh = (du - u (u . du)) / |h|.
  Matrix grad = output_grad;
  if (params.options.output_normalize) {
    for (Eigen::Index i = 0; i < grad.rows(); ++i) {
      const double proj = cache.output.row(i).dot(output_grad.row(i));
      grad.row(i) = (output_grad.row(i) - proj * cache.output.row(i)) / cache.output_norms(i);
    }
  }

  for (int l = kProjectionLayers - 1; l >= 0; --l) {
    const auto& layer = params.layers[l];
    const auto& lc = cache.layers[l];

    Matrix dy = grad;
    if (lc.activated) {
      dy.array() *= lc.pre_activation.unaryExpr([](double v) { return gelu_derivative(v); }).array();
    }

    // Layer norm: dz = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)).
    const Matrix dxhat = dy.array().rowwise() * layer.ln_gamma.transpose().array();
    const Vector mean1 = dxhat.rowwise().mean();
    const Vector mean2 = dxhat.cwiseProduct(lc.normalized).rowwise().mean();
    Matrix dz = dxhat;
    dz.colwise() -= mean1;
    dz.array() -= lc.normalized.array().colwise() * mean2.array();
    dz.array().colwise() *= lc.rstd.array();

    Matrix dinput = dz * layer.weight;
    if (adapters) {
      const auto& f = adapters->layers[l];
      auto& g = result.adapters->layers[l];
      // z += s * T B^T with T = X_d A^T.
      g.b = scaling * (dz.transpose() * lc.lora_hidden);
      const Matrix dt = scaling * (dz * f.b);
      g.a = dt.transpose() * lc.lora_input;
      Matrix dxd = dt * f.a;
      if (lc.dropout_scale.size() != 0) dxd = dxd.cwiseProduct(lc.dropout_scale);
      dinput += dxd;
    } else {
      auto& g = result.base->layers[l];
      g.ln_gamma = dy.cwiseProduct(lc.normalized).colwise().sum().transpose();
      g.ln_beta = dy.colwise().sum().transpose();
      g.weight = dz.transpose() * lc.input;
      g.bias = dz.colwise().sum().transpose();
    }
    grad = std::move(dinput);
  }

  if (cache.has_stub) {
    const auto& f = *adapters->stub;
    auto& g = result.adapters->stub.emplace();
    g.b = scaling * (grad.transpose() * cache.stub_lora_hidden);
    const Matrix dt = scaling * (grad * f.b);
    g.a = dt.transpose() * cache.stub_lora_input;
    Matrix dxd = dt * f.a;
    if (cache.stub_dropout_scale.size() != 0) dxd = dxd.cwiseProduct(cache.stub_dropout_scale);
    grad += dxd;
  }
  result.input_grad = std::move(grad);
  return result;
}

std::vector<TensorRef> trainable_tensors(ProjectionParams& params, LoraAdapter* adapters) {
  std::vector<TensorRef> out;
  if (adapters) {
    for (int l = 0; l < kProjectionLayers; ++l) {
      const auto n = std::to_string(l + 1);
      out.push_back({"lora" + n + ".a", as_span(adapters->layers[l].a)});
      out.push_back({"lora" + n + ".b", as_span(adapters->layers[l].b)});
    }
    if (adapters->stub) {
      out.push_back({"stub.a", as_span(adapters->stub->a)});
      out.push_back({"stub.b", as_span(adapters->stub->b)});
    }
    return out;
  }
  for (int l = 0; l < kProjectionLayers; ++l) {
    const auto n = std::to_string(l + 1);
    auto& layer = params.layers[l];
    out.push_back({"layer" + n + ".weight", as_span(layer.weight)});
    out.push_back({"layer" + n + ".bias", as_span(layer.bias)});
    out.push_back({"layer" + n + ".ln_gamma", as_span(layer.ln_gamma)});
    out.push_back({"layer" + n + ".ln_beta", as_span(layer.ln_beta)});
  }
  return out;
}

std::vector<ConstTensorRef> gradient_tensors(const BackwardResult& grads) {
  std::vector<ConstTensorRef> out;
  if (grads.adapters) {
    for (int l = 0; l < kProjectionLayers; ++l) {
      const auto n = std::to_string(l + 1);
      out.push_back({"lora" + n + ".a", as_span(grads.adapters->layers[l].a)});
      out.push_back({"lora" + n + ".b", as_span(grads.adapters->layers[l].b)});
    }
    if (grads.adapters->stub) {
      out.push_back({"stub.a", as_span(grads.adapters->stub->a)});
      out.push_back({"stub.b", as_span(grads.adapters->stub->b)});
    }
  }
  if (grads.base) {
    for (int l = 0; l < kProjectionLayers; ++l) {
      const auto n = std::to_string(l + 1);
      const auto& g = grads.base->layers[l];
      out.push_back({"layer" + n + ".weight", as_span(g.weight)});
      out.push_back({"layer" + n + ".bias", as_span(g.bias)});
      out.push_back({"layer" + n + ".ln_gamma", as_span(g.ln_gamma)});
      out.push_back({"layer" + n + ".ln_beta", as_span(g.ln_beta)});
    }
  }
  return out;
}

}  // namespace mate

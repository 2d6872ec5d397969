// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "mate/binary_io.hpp"

namespace mate {

namespace {

constexpr std::uint32_t kOptOutputNormalize = 1u;
constexpr std::uint32_t kOptFinalActivation = 2u;

void write_matrix(io::ByteWriter& w, const Matrix& m) {
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  w.f64_array(as_span(m));
}

void write_vector(io::ByteWriter& w, const Vector& v) {
  w.u64(static_cast<std::uint64_t>(v.size()));
  w.f64_array(as_span(v));
}

Matrix read_matrix(io::ByteReader& r) {
  const auto rows = r.u64();
  const auto cols = r.u64();
  if (cols != 0 && rows > r.remaining() / 8 / cols) throw Error("truncated file: tensor larger than payload");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  r.f64_array(as_span(m));
  return m;
}

Vector read_vector(io::ByteReader& r) {
  const auto n = r.u64();
  r.require(n, 8, "vector");
  Vector v(static_cast<Eigen::Index>(n));
  r.f64_array(as_span(v));
  return v;
}

void write_factors(io::ByteWriter& w, const LoraFactors& f) {
  write_matrix(w, f.a);
  write_matrix(w, f.b);
}

LoraFactors read_factors(io::ByteReader& r) {
  LoraFactors f;
  f.a = read_matrix(r);
  f.b = read_matrix(r);
  return f;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.params.validate();
  io::ByteWriter w;
  const auto& p = ckpt.params;
  w.u32(p.dims.input);
  w.u32(p.dims.hidden);
  w.u32(p.dims.output);
  w.u32((p.options.output_normalize ? kOptOutputNormalize : 0u) |
        (p.options.final_activation ? kOptFinalActivation : 0u));
  for (const auto& layer : p.layers) {
    write_matrix(w, layer.weight);
    write_vector(w, layer.bias);
    write_vector(w, layer.ln_gamma);
    write_vector(w, layer.ln_beta);
  }
  w.u8(ckpt.adapters ? 1 : 0);
  if (ckpt.adapters) {
    const auto& a = *ckpt.adapters;
    w.u32(a.config.rank);
    w.f64(a.config.alpha);
    w.f64(a.config.dropout);
    w.u8(a.config.encoder_stub ? 1 : 0);
    for (const auto& f : a.layers) write_factors(w, f);
    w.u8(a.stub ? 1 : 0);
    if (a.stub) write_factors(w, *a.stub);
  }
  w.u64(ckpt.seed_lineage.size());
  for (auto s : ckpt.seed_lineage) w.u64(s);
  io::write_container(path, io::kCheckpointMagic, kCheckpointFormatVersion, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto payload = io::read_container(path, io::kCheckpointMagic, kCheckpointFormatVersion);
  io::ByteReader r(payload);
  Checkpoint ckpt;
  auto& p = ckpt.params;
  p.dims.input = r.u32();
  p.dims.hidden = r.u32();
  p.dims.output = r.u32();
  const auto opts = r.u32();
  if ((opts & ~(kOptOutputNormalize | kOptFinalActivation)) != 0) throw Error("unknown option bits in checkpoint");
  p.options.output_normalize = (opts & kOptOutputNormalize) != 0;
  p.options.final_activation = (opts & kOptFinalActivation) != 0;
  for (auto& layer : p.layers) {
    layer.weight = read_matrix(r);
    layer.bias = read_vector(r);
    layer.ln_gamma = read_vector(r);
    layer.ln_beta = read_vector(r);
  }
  p.validate();
  if (r.u8() != 0) {
    LoraAdapter a;
    a.config.rank = r.u32();
    a.config.alpha = r.f64();
    a.config.dropout = r.f64();
    a.config.encoder_stub = r.u8() != 0;
    a.config.validate();
    for (auto& f : a.layers) f = read_factors(r);
    if (r.u8() != 0) a.stub = read_factors(r);
    if (a.config.encoder_stub != a.stub.has_value()) throw Error("checkpoint encoder stub flag disagrees with payload");
    // A zero-row forward validates every adapter shape against the base.
    (void)project_forward(p, &a, Matrix(0, p.dims.input), Mode::kEval);
    ckpt.adapters = std::move(a);
  }
  const auto n = r.u64();
  r.require(n, 8, "seed lineage");
  ckpt.seed_lineage.resize(n);
  for (auto& s : ckpt.seed_lineage) s = r.u64();
  if (!r.at_end()) throw Error("trailing bytes in checkpoint");
  return ckpt;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

bool bitwise_equal(const ProjectionParams& a, const ProjectionParams& b) {
  if (a.dims.input != b.dims.input || a.dims.hidden != b.dims.hidden || a.dims.output != b.dims.output ||
      a.options.output_normalize != b.options.output_normalize ||
      a.options.final_activation != b.options.final_activation) {
    return false;
  }
  for (int l = 0; l < kProjectionLayers; ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (!bitwise_equal(x.weight, y.weight) || !bitwise_equal(x.bias, y.bias) ||
        !bitwise_equal(x.ln_gamma, y.ln_gamma) || !bitwise_equal(x.ln_beta, y.ln_beta)) {
      return false;
    }
  }
  return true;
}

bool bitwise_equal(const LoraAdapter& a, const LoraAdapter& b) {
  if (a.config.rank != b.config.rank ||
      std::bit_cast<std::uint64_t>(a.config.alpha) != std::bit_cast<std::uint64_t>(b.config.alpha) ||
      std::bit_cast<std::uint64_t>(a.config.dropout) != std::bit_cast<std::uint64_t>(b.config.dropout) ||
      a.config.encoder_stub != b.config.encoder_stub || a.stub.has_value() != b.stub.has_value()) {
    return false;
  }
  for (int l = 0; l < kProjectionLayers; ++l) {
    if (!bitwise_equal(a.layers[l].a, b.layers[l].a) || !bitwise_equal(a.layers[l].b, b.layers[l].b)) return false;
  }
  return !a.stub || (bitwise_equal(a.stub->a, b.stub->a) && bitwise_equal(a.stub->b, b.stub->b));
}

bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
  if (!bitwise_equal(a.params, b.params) || a.seed_lineage != b.seed_lineage ||
      a.adapters.has_value() != b.adapters.has_value()) {
    return false;
  }
  return !a.adapters || bitwise_equal(*a.adapters, *b.adapters);
}

}  // namespace mate

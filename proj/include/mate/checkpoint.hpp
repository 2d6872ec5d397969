// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mate/nn_core.hpp"

namespace mate {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Projection weights, optional adapters, and the seeds of every stage that
/// produced them (oldest first).
struct Checkpoint {
  ProjectionParams params;
  std::optional<LoraAdapter> adapters;
  std::vector<std::uint64_t> seed_lineage;

  const LoraAdapter* adapter_ptr() const { return adapters ? &*adapters : nullptr; }
};

/// "MATP" container; every tensor is stored as raw float64 so reload is bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

bool bitwise_equal(const Matrix& a, const Matrix& b);
bool bitwise_equal(const Vector& a, const Vector& b);
bool bitwise_equal(const ProjectionParams& a, const ProjectionParams& b);
bool bitwise_equal(const LoraAdapter& a, const LoraAdapter& b);
bool bitwise_equal(const Checkpoint& a, const Checkpoint& b);

}  // namespace mate

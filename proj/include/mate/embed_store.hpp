// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mate/types.hpp"

namespace mate {

/// N row vectors of a fixed dimension with unique string ids.
///
/// Storage is 32-bit float, row-major. Every foundation-encoder output enters
/// the system through this type; `normalized()` must hold before any loss or
/// retrieval consumes it.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// Validates shape, finiteness and id uniqueness. `normalized` is checked
  /// against the actual row norms (1 +- 1e-5) when set.
  EmbeddingMatrix(std::vector<std::string> ids, std::vector<float> data, std::uint32_t dim,
                  std::string source_tag = {}, bool normalized = false);

  /// Builds from a double batch (e.g. projection output), rounding to float.
  static EmbeddingMatrix from_rows(std::vector<std::string> ids, const Matrix& rows, std::string source_tag,
                                   bool normalized);

  std::size_t rows() const { return ids_.size(); }
  std::uint32_t dim() const { return dim_; }
  bool normalized() const { return normalized_; }
  const std::string& source_tag() const { return source_tag_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& data() const { return data_; }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  /// Row index of `id`; throws naming the id when absent.
  std::size_t index_of(std::string_view id) const;
  bool contains(std::string_view id) const;

  /// Gathers rows (by index) into a double batch.
  Matrix gather(std::span<const std::size_t> indices) const;
  Matrix to_matrix() const;
  /// Sub-matrix holding the given rows, preserving flags and tag.
  EmbeddingMatrix subset(std::span<const std::size_t> indices) const;

  bool operator==(const EmbeddingMatrix& other) const;

 private:
  void build_index();

  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::uint32_t dim_ = 0;
  std::string source_tag_;
  bool normalized_ = false;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;
inline constexpr double kUnitNormTolerance = 1e-5;
inline constexpr double kZeroNormEpsilon = 1e-12;

/// Writes the "MATE" binary container. Errors on empty matrices or unwritable paths.
void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);
/// Reads and fully validates a "MATE" file (CRC, finiteness, unique ids, norms).
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
/// Exact byte size `save_embeddings` produces for the given shape and ids.
std::uint64_t embedding_file_size(std::uint64_t rows, std::uint32_t dim, std::span<const std::string> ids,
                                  std::string_view source_tag);

/// Scales every row to unit Euclidean norm. A row with norm <= 1e-12 is an
/// error naming the row id.
EmbeddingMatrix normalize_rows(const EmbeddingMatrix& matrix);

enum class PairKind { kCaptionCaption, kQueryDocument, kImageCaption, kEvalMultipositive };

std::string_view to_string(PairKind kind);
PairKind parse_pair_kind(std::string_view text);

/// Index-free pair records linking a source matrix to a target matrix.
///
/// One-to-one kinds populate `source_ids`/`target_ids` in parallel. The
/// multipositive kind populates `positives` (one entry per source id, in
/// manifest order) and mirrors every (source, positive) edge into the
/// parallel lists as well.
struct PairDataset {
  PairKind kind = PairKind::kCaptionCaption;
  std::vector<std::string> source_ids;
  std::vector<std::string> target_ids;
  std::vector<std::pair<std::string, std::vector<std::string>>> positives;

  std::size_t size() const { return kind == PairKind::kEvalMultipositive ? positives.size() : source_ids.size(); }
};

/// Matrices the manifest's two id columns refer to.
struct PairSources {
  const EmbeddingMatrix& source;
  const EmbeddingMatrix& target;
};

/// Parses a manifest and validates it against `sources`: dangling ids,
/// duplicate pairs, empty positive sets and empty datasets are errors.
PairDataset load_pairs(const std::filesystem::path& manifest_path, const PairSources& sources);
/// Parses manifest text without resolving ids (format errors only).
PairDataset parse_pairs(std::string_view text);
void validate_pairs(const PairDataset& pairs, const PairSources& sources);
void save_pairs(const PairDataset& pairs, const std::filesystem::path& path);
std::string format_pairs(const PairDataset& pairs);

/// Row-index pairs (source row, target row) for one-to-one training.
struct IndexedPairs {
  std::vector<std::size_t> source_rows;
  std::vector<std::size_t> target_rows;
  std::size_t size() const { return source_rows.size(); }
};

IndexedPairs resolve_pairs(const PairDataset& pairs, const PairSources& sources);

}  // namespace mate

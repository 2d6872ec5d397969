// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/embed_store.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "mate/binary_io.hpp"

namespace mate {

namespace {

constexpr std::uint32_t kFlagNormalized = 1u;

double row_norm(std::span<const float> row) {
  double s = 0.0;
  for (float v : row) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::vector<float> data, std::uint32_t dim,
                                 std::string source_tag, bool normalized)
    : ids_(std::move(ids)),
      data_(std::move(data)),
      dim_(dim),
      source_tag_(std::move(source_tag)),
      normalized_(normalized) {
  if (dim_ == 0) throw Error("embedding dimension must be positive");
  if (data_.size() != ids_.size() * static_cast<std::size_t>(dim_)) {
    throw Error("embedding data size " + std::to_string(data_.size()) + " does not match " +
                std::to_string(ids_.size()) + " ids x dim " + std::to_string(dim_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw Error("non-finite value in embedding row '" + ids_[i / dim_] + "'");
    }
  }
  build_index();
  if (normalized_) {
    for (std::size_t i = 0; i < rows(); ++i) {
      const double n = row_norm(row(i));
      if (std::abs(n - 1.0) > kUnitNormTolerance) {
        throw Error("row '" + ids_[i] + "' flagged normalized but has norm " + std::to_string(n));
      }
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::from_rows(std::vector<std::string> ids, const Matrix& rows, std::string source_tag,
                                           bool normalized) {
  if (static_cast<std::size_t>(rows.rows()) != ids.size()) throw Error("id count does not match row count");
  std::vector<float> data(static_cast<std::size_t>(rows.size()));
  for (Eigen::Index i = 0; i < rows.size(); ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(rows.data()[i]);
  return EmbeddingMatrix(std::move(ids), std::move(data), static_cast<std::uint32_t>(rows.cols()),
                         std::move(source_tag), normalized);
}

void EmbeddingMatrix::build_index() {
  index_.clear();
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw Error("duplicate id '" + ids_[i] + "'");
  }
}

std::size_t EmbeddingMatrix::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw Error("unknown id '" + std::string(id) + "'");
  return it->second;
}

bool EmbeddingMatrix::contains(std::string_view id) const { return index_.contains(std::string(id)); }

Matrix EmbeddingMatrix::gather(std::span<const std::size_t> indices) const {
  Matrix out(static_cast<Eigen::Index>(indices.size()), dim_);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = row(indices[r]);
    for (std::uint32_t c = 0; c < dim_; ++c) out(static_cast<Eigen::Index>(r), c) = src[c];
  }
  return out;
}

Matrix EmbeddingMatrix::to_matrix() const {
  Matrix out(static_cast<Eigen::Index>(rows()), dim_);
  for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = data_[i];
  return out;
}

EmbeddingMatrix EmbeddingMatrix::subset(std::span<const std::size_t> indices) const {
  std::vector<std::string> ids;
  std::vector<float> data;
  ids.reserve(indices.size());
  data.reserve(indices.size() * dim_);
  for (std::size_t i : indices) {
    ids.push_back(ids_.at(i));
    const auto r = row(i);
    data.insert(data.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(std::move(ids), std::move(data), dim_, source_tag_, normalized_);
}

bool EmbeddingMatrix::operator==(const EmbeddingMatrix& other) const {
  if (dim_ != other.dim_ || normalized_ != other.normalized_ || source_tag_ != other.source_tag_ ||
      ids_ != other.ids_ || data_.size() != other.data_.size()) {
    return false;
  }
  // Bitwise comparison so -0.0 vs 0.0 counts as a difference.
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(data_[i]) != std::bit_cast<std::uint32_t>(other.data_[i])) return false;
  }
  return true;
}

std::uint64_t embedding_file_size(std::uint64_t rows, std::uint32_t dim, std::span<const std::string> ids,
                                  std::string_view source_tag) {
  std::uint64_t size = 4 + 4 + 8 + 4 + 4;  // magic, version, N, D, flags
  size += rows * dim * 4;
  for (const auto& id : ids) size += 4 + id.size();
  size += 4 + source_tag.size();
  size += 4;  // CRC32
  return size;
}

void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  if (matrix.rows() == 0 || matrix.dim() == 0) throw Error("cannot save an empty embedding matrix");
  io::ByteWriter w;
  w.u64(matrix.rows());
  w.u32(matrix.dim());
  w.u32(matrix.normalized() ? kFlagNormalized : 0u);
  for (float v : matrix.data()) w.f32(v);
  for (const auto& id : matrix.ids()) w.str(id);
  w.str(matrix.source_tag());
  io::write_container(path, io::kEmbeddingMagic, kEmbeddingFormatVersion, w.bytes());
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  const auto payload = io::read_container(path, io::kEmbeddingMagic, kEmbeddingFormatVersion);
  io::ByteReader r(payload);
  const std::uint64_t n = r.u64();
  const std::uint32_t d = r.u32();
  const std::uint32_t flags = r.u32();
  if (n == 0 || d == 0) throw Error("embedding file declares an empty matrix");
  if ((flags & ~kFlagNormalized) != 0) throw Error("unknown flag bits in embedding file");
  if (n > r.remaining() / d) throw Error("truncated file: payload shorter than N*D floats");
  r.require(n * d, 4, "embedding payload");
  std::vector<float> data(n * d);
  for (auto& v : data) v = r.f32();
  r.require(n, 4, "id table");
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) ids.push_back(r.str());
  std::string tag = r.str();
  if (!r.at_end()) throw Error("trailing bytes after id table");
  return EmbeddingMatrix(std::move(ids), std::move(data), d, std::move(tag), (flags & kFlagNormalized) != 0);
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& matrix) {
  std::vector<float> data(matrix.data().size());
  const std::uint32_t d = matrix.dim();
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    const auto src = matrix.row(i);
    const double n = row_norm(src);
    if (!(n > kZeroNormEpsilon)) throw Error("zero-norm row '" + matrix.id(i) + "'");
    for (std::uint32_t c = 0; c < d; ++c) {
      data[i * d + c] = static_cast<float>(static_cast<double>(src[c]) / n);
    }
  }
  return EmbeddingMatrix(matrix.ids(), std::move(data), d, matrix.source_tag(), true);
}

std::string_view to_string(PairKind kind) {
  switch (kind) {
    case PairKind::kCaptionCaption:
      return "caption-caption";
    case PairKind::kQueryDocument:
      return "query-document";
    case PairKind::kImageCaption:
      return "image-caption";
    case PairKind::kEvalMultipositive:
      return "eval-multipositive";
  }
  return "unknown";
}

PairKind parse_pair_kind(std::string_view text) {
  for (auto k : {PairKind::kCaptionCaption, PairKind::kQueryDocument, PairKind::kImageCaption,
                 PairKind::kEvalMultipositive}) {
    if (to_string(k) == text) return k;
  }
  throw Error("unknown pair kind '" + std::string(text) + "'");
}

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

PairDataset parse_pairs(std::string_view text) {
  PairDataset ds;
  bool header_seen = false;
  std::size_t line_no = 0;
  std::set<std::pair<std::string, std::string>> seen;
  std::unordered_set<std::string> seen_sources;

  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = "manifest line " + std::to_string(line_no);
    if (!header_seen) {
      constexpr std::string_view prefix = "#kind=";
      if (!line.starts_with(prefix)) throw Error(where + ": expected header '#kind=<kind>'");
      ds.kind = parse_pair_kind(line.substr(prefix.size()));
      header_seen = true;
      continue;
    }
    const auto cols = split(line, '\t');
    if (cols.size() != 2 || cols[0].empty() || cols[1].empty()) {
      throw Error(where + ": expected 'source_id<TAB>target'");
    }
    if (ds.kind == PairKind::kEvalMultipositive) {
      if (!seen_sources.insert(cols[0]).second) throw Error(where + ": duplicate source id '" + cols[0] + "'");
      auto targets = split(cols[1], ',');
      std::unordered_set<std::string> uniq;
      for (const auto& t : targets) {
        if (t.empty()) throw Error(where + ": empty positive id");
        if (!uniq.insert(t).second) throw Error(where + ": duplicate pair (" + cols[0] + ", " + t + ")");
        ds.source_ids.push_back(cols[0]);
        ds.target_ids.push_back(t);
      }
      ds.positives.emplace_back(cols[0], std::move(targets));
    } else {
      if (!seen.emplace(cols[0], cols[1]).second) {
        throw Error(where + ": duplicate pair (" + cols[0] + ", " + cols[1] + ")");
      }
      ds.source_ids.push_back(cols[0]);
      ds.target_ids.push_back(cols[1]);
    }
    if (end == text.size()) break;
  }
  if (!header_seen) throw Error("manifest is missing the '#kind=' header");
  if (ds.size() == 0) throw Error("empty pair dataset");
  return ds;
}

void validate_pairs(const PairDataset& pairs, const PairSources& sources) {
  if (pairs.size() == 0) throw Error("empty pair dataset");
  if (pairs.source_ids.size() != pairs.target_ids.size()) throw Error("pair lists have different lengths");
  std::set<std::pair<std::string_view, std::string_view>> seen;
  for (std::size_t i = 0; i < pairs.source_ids.size(); ++i) {
    const auto& s = pairs.source_ids[i];
    const auto& t = pairs.target_ids[i];
    if (!sources.source.contains(s)) throw Error("dangling source id '" + s + "'");
    if (!sources.target.contains(t)) throw Error("dangling target id '" + t + "'");
    if (!seen.emplace(s, t).second) throw Error("duplicate pair (" + s + ", " + t + ")");
  }
  for (const auto& [src, pos] : pairs.positives) {
    if (pos.empty()) throw Error("empty positive set for '" + src + "'");
  }
}

PairDataset load_pairs(const std::filesystem::path& manifest_path, const PairSources& sources) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw Error("cannot open manifest: " + manifest_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto ds = parse_pairs(buf.str());
  validate_pairs(ds, sources);
  return ds;
}

std::string format_pairs(const PairDataset& pairs) {
  std::string out = "#kind=" + std::string(to_string(pairs.kind)) + "\n";
  if (pairs.kind == PairKind::kEvalMultipositive) {
    for (const auto& [src, pos] : pairs.positives) {
      out += src;
      out += '\t';
      for (std::size_t i = 0; i < pos.size(); ++i) {
        if (i) out += ',';
        out += pos[i];
      }
      out += '\n';
    }
  } else {
    for (std::size_t i = 0; i < pairs.source_ids.size(); ++i) {
      out += pairs.source_ids[i] + '\t' + pairs.target_ids[i] + '\n';
    }
  }
  return out;
}

void save_pairs(const PairDataset& pairs, const std::filesystem::path& path) {
  const auto text = format_pairs(pairs);
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

IndexedPairs resolve_pairs(const PairDataset& pairs, const PairSources& sources) {
  IndexedPairs out;
  out.source_rows.reserve(pairs.source_ids.size());
  out.target_rows.reserve(pairs.target_ids.size());
  for (std::size_t i = 0; i < pairs.source_ids.size(); ++i) {
    out.source_rows.push_back(sources.source.index_of(pairs.source_ids[i]));
    out.target_rows.push_back(sources.target.index_of(pairs.target_ids[i]));
  }
  return out;
}

}  // namespace mate

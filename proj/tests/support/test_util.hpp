// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mate/embed_store.hpp"
#include "mate/types.hpp"

namespace mate::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mate-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Matrix unit_rows(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m = gaussian(rng, rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i).normalize();
  return m;
}

inline std::vector<std::string> make_ids(std::size_t n, const std::string& prefix) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

inline EmbeddingMatrix random_embeddings(std::mt19937_64& rng, std::size_t n, std::size_t dim,
                                         const std::string& prefix = "r") {
  return normalize_rows(EmbeddingMatrix::from_rows(make_ids(n, prefix),
                                                   gaussian(rng, static_cast<Eigen::Index>(n),
                                                            static_cast<Eigen::Index>(dim)),
                                                   prefix, false));
}

}  // namespace mate::testing

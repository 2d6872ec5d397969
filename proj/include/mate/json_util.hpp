// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mate/types.hpp"

namespace mate {

using Json = nlohmann::json;

/// Rejects non-objects and any key outside `allowed`; `context` prefixes errors.
inline void require_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view context) {
  if (!j.is_object()) throw Error(std::string(context) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(std::string(context) + ": unknown key '" + key + "'");
    }
  }
}

/// Typed read of an optional member; a present member of the wrong type is an error.
template <typename T>
void read_field(const Json& j, std::string_view key, T& out, std::string_view context) {
  auto it = j.find(std::string(key));
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(std::string(context) + ": key '" + std::string(key) + "' has the wrong type");
  }
}

/// 64-bit FNV-1a as 16 hex digits; used for config fingerprints.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

}  // namespace mate

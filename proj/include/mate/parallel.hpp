// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace mate {

/// Runs body(i) for i in [0, n) on up to `threads` workers using contiguous
/// chunks. threads <= 1 runs inline. Callers must write to disjoint outputs.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace mate

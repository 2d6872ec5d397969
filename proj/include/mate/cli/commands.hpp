// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

#include "mate/json_util.hpp"
#include "mate/retrieval.hpp"

namespace mate::cli {

/// Entry point of the `mate` executable. Returns 0 on success, 1 when a
/// module rejects its input (message printed verbatim), 2 on usage errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

Json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const Json& j);

}  // namespace mate::cli

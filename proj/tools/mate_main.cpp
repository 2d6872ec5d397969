// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "mate/cli/commands.hpp"

int main(int argc, char** argv) { return mate::cli::run(argc, argv, std::cout, std::cerr); }

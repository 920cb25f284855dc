// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return changeadapt::cli::run(args, std::cout, std::cerr);
}

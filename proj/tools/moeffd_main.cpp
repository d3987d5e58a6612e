// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "moeffd/cli.hpp"

int main(int argc, char** argv) { return moeffd::run_cli(argc, argv, std::cout, std::cerr); }

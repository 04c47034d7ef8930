// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include <iostream>

#include "ssbrpe/cli/cli.hpp"

int main(int argc, char** argv) { return ssbrpe::cli::run(argc, argv, std::cout, std::cerr); }

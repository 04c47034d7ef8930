// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <random>

namespace ssbrpe {

using Rng = std::mt19937_64;

// Independent stream for item `index` under `seed`.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return Rng(seq);
}

}  // namespace ssbrpe

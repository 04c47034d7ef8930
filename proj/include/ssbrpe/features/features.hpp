// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssbrpe/audio/audio.hpp"
#include "ssbrpe/numerics/array.hpp"

namespace ssbrpe::features {

struct FeatureConfig {
  int sample_rate = 16000;
  int n_gammatone = 64;
  double fmin_hz = 50.0;
  double fmax_hz = 8000.0;
  double frame_len_s = 0.025;
  double hop_s = 0.010;
  int phase_nfft = 1024;
  double phase_max_hz = 500.0;
  // Clips are cropped or zero-padded to this length before extraction
  // (0 keeps the clip length).
  double clip_seconds = 4.0;

  void validate() const;
  std::size_t frame_len_samples() const;
  std::size_t hop_samples() const;
  int n_phase_rows() const;
  int n_rows() const { return n_gammatone + n_phase_rows(); }
  std::size_t frames_for(std::size_t n_samples) const;
  // Stable hash of every field; stored in checkpoints.
  std::string fingerprint() const;
};

void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);

struct RowDescriptor {
  enum class Kind { kGammatone, kPhase };
  Kind kind = Kind::kGammatone;
  int index = 0;  // gammatone channel or FFT bin
  double hz = 0.0;

  friend bool operator==(const RowDescriptor&, const RowDescriptor&) = default;
};

struct FeatureBlock {
  nn::Array values;  // F x T, gammatone rows first
  std::vector<RowDescriptor> row_map;
  double frame_hop_s = 0.0;
  double frame_len_s = 0.0;
  int sample_rate = 16000;
  int n_gamma = 0;
  int n_phase = 0;

  std::size_t rows() const { return values.shape()[0]; }
  std::size_t frames() const { return values.shape()[1]; }
};

// ERB-rate scale, 21.4 log10(0.00437 f + 1).
double erb_rate(double hz);
double erb_rate_to_hz(double erbs);

// n centres equally spaced on the ERB-rate scale, endpoints inclusive.
std::vector<double> erb_center_frequencies(int n, double fmin_hz, double fmax_hz,
                                           int sample_rate = 16000);

// F_g x T log10 frame energies of a 4th-order all-pole gammatone bank.
nn::Array gammatone_spectrogram(const audio::AudioClip& clip, const FeatureConfig& config);

// F_p x T short-time phase (radians) of bins at or below phase_max_hz. Frames
// are centred on the gammatone frames so both branches share T.
nn::Array lowfreq_phase_spectrogram(const audio::AudioClip& clip, const FeatureConfig& config);

// Per-row z-scores for the gammatone rows, fitted on training blocks.
struct FeatureNormalizer {
  std::vector<float> mean;
  std::vector<float> stddev;

  static constexpr double kStdFloor = 1e-6;
  bool empty() const { return mean.empty(); }
  static FeatureNormalizer fit(std::span<const FeatureBlock> blocks);
  void apply(FeatureBlock& block) const;
};

FeatureBlock assemble_feature_block(const nn::Array& gamma, const nn::Array& phase,
                                    const FeatureConfig& config,
                                    const FeatureNormalizer* normalizer = nullptr);

// Crop/pad to config.clip_seconds, then both branches and assembly.
FeatureBlock extract_features(const audio::AudioClip& clip, const FeatureConfig& config,
                              const FeatureNormalizer* normalizer = nullptr);

// ---- patches ---------------------------------------------------------------

inline constexpr std::size_t kPatchSize = 16;
inline constexpr std::size_t kPatchArea = kPatchSize * kPatchSize;

enum class PatchMode { kPretrain, kFinetune };

std::size_t stride_for(PatchMode mode);  // 16 or 10 (overlap 6)
// Smallest extent >= max(dim, 16) with (extent - 16) divisible by stride.
std::size_t covered_extent(std::size_t dim, std::size_t stride);

struct PatchGrid {
  std::size_t patch = kPatchSize;
  std::size_t stride = kPatchSize;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t pad_f = 0;
  std::size_t pad_t = 0;

  std::size_t count() const { return rows * cols; }
  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

PatchGrid make_grid(std::size_t n_rows, std::size_t n_frames, PatchMode mode);

struct PatchSet {
  nn::Array patches;  // I x 256, patch i = r * cols + c
  PatchGrid grid;
};

PatchSet patchify(const nn::Array& values, PatchMode mode);
inline PatchSet patchify(const FeatureBlock& block, PatchMode mode) {
  return patchify(block.values, mode);
}
// Inverse tiling; defined for non-overlapping grids only. Returns the padded block.
nn::Array unpatchify(const PatchSet& set);

// ---- files -------------------------------------------------------------------

// Binary block plus `<path>.json` carrying the row map.
void write_feature_block(const std::filesystem::path& path, const FeatureBlock& block);
FeatureBlock read_feature_block(const std::filesystem::path& path);

}  // namespace ssbrpe::features

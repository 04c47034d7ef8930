// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssbrpe/audio/audio.hpp"
#include "ssbrpe/rir/rir.hpp"
#include "ssbrpe/rng.hpp"

namespace ssbrpe::dataset {

using audio::AudioClip;

enum class Split { kTrain, kVal, kTest };
enum class SourceKind { kSyntheticRir, kExternalRir };
enum class NoiseKind { kWhite, kPink };

std::string to_string(Split s);
std::string to_string(SourceKind k);
std::string to_string(NoiseKind k);
Split parse_split(const std::string& s);
SourceKind parse_source_kind(const std::string& s);
NoiseKind parse_noise_kind(const std::string& s);

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

struct ManifestEntry {
  std::string clip_path;  // relative to the manifest's directory
  std::string room_id;
  double volume_m3 = 0.0;
  double rt60_s = 0.0;
  double snr_db = kNoNoise;
  Split split = Split::kTrain;
  SourceKind source_kind = SourceKind::kSyntheticRir;
};

struct SplitSpec {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  // Limited-data protocol: fraction of training rooms kept; val/test untouched.
  double room_type_keep_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// room_id -> split for the kept rooms. Rooms dropped by the keep fraction are
// absent from the result.
std::map<std::string, Split> assign_splits(const std::vector<std::string>& room_ids,
                                           const SplitSpec& spec);

// ---- signal operations ----------------------------------------------------

// Full linear convolution peak-normalized to 0.9.
AudioClip convolve_speech_rir(const AudioClip& speech, const rir::RirRecord& rir);

// Scales generated noise so that 10 log10(P_signal / P_noise) == snr_db.
// snr_db == +inf returns the input unchanged.
AudioClip add_noise(const AudioClip& clip, NoiseKind kind, double snr_db, Rng& rng);

std::vector<float> make_noise(NoiseKind kind, std::size_t n, Rng& rng);

// Mono mixdown, resample to 16 kHz, crop or zero-pad to `seconds`.
AudioClip standardize_pretrain_clip(const audio::MultiChannelAudio& clip, double seconds = 10.0);

// Amplitude-modulated, formant-filtered pulse/noise excitation with pauses.
// Stands in for read speech when no corpus is supplied.
AudioClip synthesize_speech(Rng& rng, double seconds, int sample_rate = audio::kTargetSampleRate);

// Draws `seconds` of dry speech at 16 kHz.
using SpeechSource = std::function<AudioClip(Rng&, double seconds)>;
SpeechSource synthetic_speech_source();
// Random excerpts from every WAV under `dir` (mixed to mono, resampled to
// 16 kHz, looped when shorter than requested). Throws DataError when empty.
SpeechSource speech_source_from_dir(const std::filesystem::path& dir);

// First sample whose magnitude reaches 10% of the impulse response peak.
std::size_t direct_sound_onset(const std::vector<float>& rir);

// ---- corpus assembly --------------------------------------------------------

struct ClipConfig {
  double clip_seconds = 4.0;
  double snr_min_db = 0.0;
  double snr_max_db = 30.0;
  std::vector<NoiseKind> noise_kinds{NoiseKind::kWhite, NoiseKind::kPink};
};

struct LabeledRoom {
  rir::RirRecord rir;
  SourceKind source_kind = SourceKind::kSyntheticRir;
};

// Renders per_room_clips noisy reverberant clips for every kept room into
// out_dir/clips and returns the manifest (entries ordered by room, then clip).
std::vector<ManifestEntry> build_manifest(const std::vector<LabeledRoom>& rooms,
                                          const SpeechSource& speech, int per_room_clips,
                                          const ClipConfig& clip_config, const SplitSpec& split,
                                          const std::filesystem::path& out_dir, int threads = 1);

// Writes `count` unlabeled clips (half dry, half convolved with rooms drawn
// from `rirs`) of `seconds` each into out_dir. Returns relative paths.
std::vector<std::string> build_unlabeled_corpus(const std::vector<rir::RirRecord>& rirs,
                                                const SpeechSource& speech, int count,
                                                double seconds, const ClipConfig& clip_config,
                                                std::uint64_t seed,
                                                const std::filesystem::path& out_dir,
                                                int threads = 1);

// JSON Lines, one entry per line.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
std::string manifest_line(const ManifestEntry& e);

std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, Split split);

}  // namespace ssbrpe::dataset

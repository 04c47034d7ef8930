// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssbrpe/evalmetrics/evalmetrics.hpp"
#include "ssbrpe/features/features.hpp"
#include "ssbrpe/finetune/finetune.hpp"
#include "ssbrpe/model/model.hpp"
#include "ssbrpe/pretrain/pretrain.hpp"
#include "ssbrpe/rir/rir.hpp"

namespace ssbrpe::cli {

namespace fs = std::filesystem;

struct SynthConfig {
  int rooms = 200;
  int clips_per_room = 2;
  double keep_room_fraction = 1.0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  double snr_min_db = 0.0;
  double snr_max_db = 30.0;
  // Unlabeled pretraining clips rendered next to the labeled corpus.
  int unlabeled_clips = 0;
  // Dry speech WAV directory; empty uses the built-in synthetic talker.
  std::string speech_dir;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  bool deterministic = false;
  fs::path workdir = ".";
  features::FeatureConfig features;
  model::ModelConfig model;
  pretrain::PretrainConfig pretrain;
  finetune::TrainConfig train;
  finetune::AugmentConfig augment;
  rir::RoomSamplingConfig sampling;
  SynthConfig synth;

  int worker_threads() const { return deterministic ? 1 : threads; }
  void validate() const;
};

// Full config. With `portable`, workdir and thread settings are left out so
// artifacts embedding it do not depend on where or how a run executed.
nlohmann::json to_json(const RunConfig& c, bool portable = false);
RunConfig run_config_from_json(const nlohmann::json& j);

// Built-in defaults: desk-scale encoder with room for 512 patches.
nlohmann::json default_config_json();

// Applies each file (JSON merge patch) over the defaults in order, then
// `overrides`. Keys absent from the defaults are rejected.
RunConfig resolve_config(const std::vector<fs::path>& files, const nlohmann::json& overrides);

// Parses "a.b.c=value" into a merge patch; value is JSON when it parses,
// otherwise a string.
nlohmann::json parse_assignment(const std::string& text);

// Writes dir/config.resolved.json.
void write_resolved_config(const fs::path& dir, const RunConfig& c);

// ---- layout under workdir ------------------------------------------------------

fs::path corpus_dir(const RunConfig& c);
fs::path manifest_path(const RunConfig& c);
fs::path unlabeled_dir(const RunConfig& c);
fs::path pretrain_dir(const RunConfig& c);
fs::path pretrain_checkpoint_path(const RunConfig& c);
fs::path finetune_dir(const RunConfig& c, const std::string& init);

// ---- commands --------------------------------------------------------------------

struct SynthResult {
  std::size_t entries = 0;
  std::size_t unlabeled = 0;
  fs::path manifest;
};
SynthResult cmd_dataset_synth(const RunConfig& c, std::ostream& log);

// Room draws, rendering and RT60 measurement for every room index.
std::vector<dataset::LabeledRoom> synthesize_rooms(const RunConfig& c);

struct PretrainOptions {
  fs::path data_dir;  // empty: unlabeled_dir
  fs::path out_dir;   // empty: pretrain_dir
  bool resume = false;
};
struct PretrainResult {
  std::size_t first_step = 0;  // first step run by this invocation
  std::size_t last_step = 0;
  fs::path checkpoint;
  fs::path trace;
};
PretrainResult cmd_pretrain(const RunConfig& c, const PretrainOptions& opts, std::ostream& log);

// Feature blocks of every WAV directly under `dir` (sorted by name),
// normalizer fitted on them and applied, patchified for pretraining.
std::vector<features::PatchSet> load_pretrain_corpus(const fs::path& dir,
                                                     const features::FeatureConfig& config,
                                                     int threads,
                                                     features::FeatureNormalizer* normalizer);

struct FinetuneOptions {
  std::string init = "random";  // random | pretrained
  fs::path manifest;            // empty: manifest_path
  fs::path pretrained;          // empty: pretrain_checkpoint_path
  fs::path out_dir;             // empty: finetune_dir
};
struct FinetuneResult {
  finetune::TrainResult train;
  double test_mse = 0.0;  // log domain; NaN without a test split
  fs::path checkpoint;
  fs::path history;
};
FinetuneResult cmd_finetune(const RunConfig& c, const FinetuneOptions& opts, std::ostream& log);

struct EvalOptions {
  fs::path checkpoint;
  fs::path manifest;     // empty: manifest_path
  fs::path predictions;  // CSV "pred,true"; replaces checkpoint + manifest
  std::string split = "test";
  fs::path out_dir;  // empty: checkpoint directory, or workdir
};
evalmetrics::MetricsReport cmd_eval(const RunConfig& c, const EvalOptions& opts, std::ostream& out);

std::vector<double> cmd_predict(const RunConfig& c, const fs::path& checkpoint,
                                const std::vector<fs::path>& wavs, std::ostream& out);

// Parses arguments and runs one subcommand. Returns the process exit code:
// 0 success, 2 configuration, 3 data, 4 numeric.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ssbrpe::cli

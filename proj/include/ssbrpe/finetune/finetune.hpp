// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssbrpe/dataset/dataset.hpp"
#include "ssbrpe/features/features.hpp"
#include "ssbrpe/model/model.hpp"
#include "ssbrpe/numerics/adam.hpp"
#include "ssbrpe/rng.hpp"

namespace ssbrpe::finetune {

enum class Target { kVolume, kRt60 };
std::string to_string(Target t);
Target parse_target(const std::string& s);

struct AugmentConfig {
  double sample_fraction = 0.25;
  int n_rects_min = 1;
  int n_rects_max = 4;
  // Rectangle extent as a fraction of the block's rows / frames.
  double rect_h_min = 0.05;
  double rect_h_max = 0.25;
  double rect_w_min = 0.05;
  double rect_w_max = 0.25;
  float fill_value = 0.0f;

  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

struct Rect {
  std::size_t row = 0, col = 0, height = 0, width = 0;
};

// Fills the part of `rect` that lies inside `block`.
void apply_rect(nn::Array& block, const Rect& rect, float fill_value);

// Masks round(B * sample_fraction) uniformly chosen blocks in place and
// returns their indices (sorted). Blocks must share one shape.
std::vector<std::size_t> feature_augment(std::vector<nn::Array>& batch, const AugmentConfig& config,
                                         Rng& rng);

double transform_target(double y);
double inverse_transform(double x);

struct TrainConfig {
  std::size_t max_epochs = 150;
  std::size_t patience = 10;
  double lr = 1e-4;
  double lr_decay = 0.5;
  double weight_decay = 1e-2;
  std::size_t batch_size = 32;
  Target target = Target::kVolume;
  bool augment = true;
  bool freeze_encoder = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Example {
  nn::Array block;  // normalized F x T
  float target = 0.0f;  // log10 label
};

double label_of(const dataset::ManifestEntry& e, Target t);

// Raw (unnormalized) feature blocks for every entry, paths relative to `root`.
std::vector<features::FeatureBlock> featurize(const std::vector<dataset::ManifestEntry>& entries,
                                              const std::filesystem::path& root,
                                              const features::FeatureConfig& config, int threads = 1);

std::vector<Example> make_examples(const std::vector<dataset::ManifestEntry>& entries,
                                   std::vector<features::FeatureBlock> blocks,
                                   const features::FeatureNormalizer& normalizer, Target target);

// Sets the regression bias to the mean training target.
void init_head_bias(model::Model& model, const std::vector<Example>& train);

// Mean squared log10 error of one batch (graph kept for backward).
nn::Tensor batch_loss(const model::Model& model, const std::vector<nn::Array>& blocks,
                      std::span<const float> targets, const model::ForwardOptions& opts = {});

struct EpochStats {
  double train_mse = 0.0;
  std::size_t batches = 0;
};

// One shuffled pass. Batch order, augmentation and dropout for `epoch`
// derive from (seed, epoch) only.
EpochStats finetune_epoch(model::Model& model, nn::Adam& optimizer,
                          const std::vector<Example>& train, const TrainConfig& config,
                          const AugmentConfig& augment, std::uint64_t seed, std::size_t epoch);

// Log-domain MSE without augmentation or dropout.
double evaluate_mse(const model::Model& model, const std::vector<Example>& examples,
                    std::size_t batch_size = 32);
std::vector<double> predict_log10(const model::Model& model, const std::vector<Example>& examples);

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience, double lr_decay = 0.5);

  struct Decision {
    bool improved = false;
    bool decay_lr = false;
    bool stop = false;
  };
  Decision update(double val_mse);

  std::size_t epoch() const { return epoch_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based
  double best_value() const { return best_; }
  std::size_t since_improvement() const { return since_; }

 private:
  std::size_t patience_;
  double lr_decay_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_ = 0;
  double best_ = 0.0;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double lr = 0.0;
};

std::string history_header();
std::string history_line(const HistoryRow& row);

struct TrainResult {
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  bool stopped_early = false;
};

struct TrainHooks {
  std::function<void(const HistoryRow&)> on_epoch;
  // Replaces the real epoch for scripted tests; returns the train MSE.
  std::function<double(std::size_t epoch)> run_epoch;
  // Replaces validation for scripted tests.
  std::function<double(std::size_t epoch)> validate;
};

// Trains until `patience` epochs pass without validation improvement or
// max_epochs; leaves `model` holding the lowest-validation parameters.
TrainResult train_with_early_stopping(model::Model& model, const std::vector<Example>& train,
                                      const std::vector<Example>& val, const TrainConfig& config,
                                      const AugmentConfig& augment, std::uint64_t seed,
                                      const TrainHooks& hooks = {});

// Features, patches, encoder and head from one checkpoint.
class Predictor {
 public:
  // Throws CompatibilityError when `extractor` differs from the checkpoint's
  // feature config.
  Predictor(const model::Checkpoint& ckpt, const features::FeatureConfig& extractor);

  double predict_log10(const audio::AudioClip& clip) const;
  double predict(const audio::AudioClip& clip) const { return inverse_transform(predict_log10(clip)); }
  Target target() const { return target_; }
  const model::Model& model() const { return model_; }

 private:
  model::Model model_;
  features::FeatureConfig features_;
  features::FeatureNormalizer normalizer_;
  Target target_ = Target::kVolume;
};

}  // namespace ssbrpe::finetune

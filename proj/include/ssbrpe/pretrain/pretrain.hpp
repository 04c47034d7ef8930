// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssbrpe/features/features.hpp"
#include "ssbrpe/model/model.hpp"
#include "ssbrpe/numerics/adam.hpp"
#include "ssbrpe/rng.hpp"

namespace ssbrpe::pretrain {

struct MaskPlan {
  std::vector<std::size_t> masked_indices;  // sorted, distinct
  std::size_t mask_count = 0;
};

enum class Negatives { kMaskedOnly, kAllPatches };
enum class MaskMode { kLearnedToken, kZero };
enum class LrSchedule { kConstant, kCosine };

struct PretrainConfig {
  double lambda = 10.0;
  double mask_fraction = 0.5;
  std::size_t batch_size = 8;
  std::size_t steps = 1000;
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::size_t warmup_steps = 0;
  LrSchedule schedule = LrSchedule::kConstant;
  double temperature = 1.0;
  Negatives negatives = Negatives::kMaskedOnly;
  MaskMode mask_mode = MaskMode::kLearnedToken;
  // Steps between checkpoints; 0 writes only the final one.
  std::size_t checkpoint_every = 0;

  void validate() const;
  double lr_at(std::size_t step) const;  // step is 1-based
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct LossBreakdown {
  float l_d = 0.0f;
  float l_g = 0.0f;
  float l_total = 0.0f;
};

// round(I * fraction) distinct indices clamped to [1, I - 1].
MaskPlan sample_mask(std::size_t n_patches, double mask_fraction, Rng& rng);

// Masked rows replaced by `mask_token`; others untouched.
nn::Tensor apply_mask(const nn::Tensor& embeddings, const MaskPlan& plan,
                      const nn::Tensor& mask_token);

// -(1/M) sum_i log softmax_j(c_i . t_j / temperature)[i], square M x d inputs.
nn::Tensor infonce_loss(const nn::Tensor& class_out, const nn::Tensor& targets,
                        float temperature = 1.0f);
// General form: candidate rows N x d, positives[i] indexes the candidate for
// query i.
nn::Tensor infonce_loss(const nn::Tensor& class_out, const nn::Tensor& candidates,
                        std::span<const std::size_t> positives, float temperature = 1.0f);

nn::Tensor reconstruction_mse(const nn::Tensor& recon, const nn::Tensor& original);

LossBreakdown joint_loss(float l_d, float l_g, double lambda);
nn::Tensor joint_loss(const nn::Tensor& l_d, const nn::Tensor& l_g, double lambda);

struct StepGraph {
  nn::Tensor l_d, l_g, l_total;
  std::size_t masked = 0;  // M
};

// Builds the joint objective for one batch of pretrain-mode patch sets.
// `fixed_targets`, when given, supplies each item's I x D target embeddings
// in place of the live (stop-gradient) ones; finite-difference checks use it
// to hold targets constant.
StepGraph pretrain_objective(const model::Model& model,
                             std::span<const features::PatchSet* const> batch,
                             std::span<const MaskPlan> plans, const PretrainConfig& config,
                             const std::vector<nn::Array>* fixed_targets = nullptr);

// Live target embeddings for each item (what fixed_targets replaces).
std::vector<nn::Array> target_embeddings(const model::Model& model,
                                         std::span<const features::PatchSet* const> batch);

struct TraceRow {
  std::size_t step = 0;
  LossBreakdown loss;
  double lr = 0.0;
};

std::string trace_header();
std::string trace_line(const TraceRow& row);

struct LoopState {
  std::size_t step = 0;  // last completed step
};

struct LoopHooks {
  // Called after every step.
  std::function<void(const TraceRow&)> on_step;
  // Called at checkpoint cadence and after the final step.
  std::function<void(std::size_t step, const nn::Adam& opt)> on_checkpoint;
};

// Runs steps (state.step, config.steps]. Batch composition and masks for
// step s depend only on (seed, s), so a resumed run continues bitwise.
std::vector<TraceRow> pretrain_loop(const std::vector<features::PatchSet>& corpus,
                                    model::Model& model, nn::Adam& optimizer,
                                    const PretrainConfig& config, std::uint64_t seed,
                                    LoopState& state, const LoopHooks& hooks = {});

nn::AdamConfig adam_config(const PretrainConfig& config);

}  // namespace ssbrpe::pretrain

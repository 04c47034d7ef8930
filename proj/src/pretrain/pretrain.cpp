// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/pretrain/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::pretrain {

using nn::Tensor;

void PretrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
    throw ConfigError("mask_fraction must lie in (0, 1)");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

double PretrainConfig::lr_at(std::size_t step) const {
  double f = 1.0;
  if (warmup_steps > 0 && step <= warmup_steps) {
    f = static_cast<double>(step) / static_cast<double>(warmup_steps);
  } else if (schedule == LrSchedule::kCosine && steps > warmup_steps) {
    const double p = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(steps - warmup_steps);
    f = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(p, 1.0)));
  }
  return lr * f;
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"lambda", c.lambda},
                     {"mask_fraction", c.mask_fraction},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"warmup_steps", c.warmup_steps},
                     {"schedule", c.schedule == LrSchedule::kCosine ? "cosine" : "constant"},
                     {"temperature", c.temperature},
                     {"negatives", c.negatives == Negatives::kAllPatches ? "all_patches" : "masked_only"},
                     {"mask_mode", c.mask_mode == MaskMode::kZero ? "zero" : "learned"},
                     {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  c.lambda = j.value("lambda", c.lambda);
  c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.temperature = j.value("temperature", c.temperature);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  if (j.contains("schedule")) {
    const auto s = j["schedule"].get<std::string>();
    if (s == "cosine") c.schedule = LrSchedule::kCosine;
    else if (s == "constant") c.schedule = LrSchedule::kConstant;
    else throw ConfigError("unknown lr schedule '" + s + "'");
  }
  if (j.contains("negatives")) {
    const auto s = j["negatives"].get<std::string>();
    if (s == "masked_only") c.negatives = Negatives::kMaskedOnly;
    else if (s == "all_patches") c.negatives = Negatives::kAllPatches;
    else throw ConfigError("unknown negatives mode '" + s + "'");
  }
  if (j.contains("mask_mode")) {
    const auto s = j["mask_mode"].get<std::string>();
    if (s == "learned") c.mask_mode = MaskMode::kLearnedToken;
    else if (s == "zero") c.mask_mode = MaskMode::kZero;
    else throw ConfigError("unknown mask mode '" + s + "'");
  }
}

nn::AdamConfig adam_config(const PretrainConfig& config) {
  nn::AdamConfig a;
  a.lr = config.lr_at(1);
  a.weight_decay = config.weight_decay;
  return a;
}

MaskPlan sample_mask(std::size_t n_patches, double mask_fraction, Rng& rng) {
  if (n_patches < 2) throw DomainError("masking needs at least 2 patches");
  auto count = static_cast<std::size_t>(std::llround(static_cast<double>(n_patches) * mask_fraction));
  count = std::clamp<std::size_t>(count, 1, n_patches - 1);
  std::vector<std::size_t> all(n_patches);
  std::iota(all.begin(), all.end(), 0);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n_patches - 1)(rng);
    std::swap(all[i], all[j]);
  }
  MaskPlan plan;
  plan.masked_indices.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(plan.masked_indices.begin(), plan.masked_indices.end());
  plan.mask_count = count;
  return plan;
}

Tensor apply_mask(const Tensor& embeddings, const MaskPlan& plan, const Tensor& mask_token) {
  const std::size_t n = embeddings.shape()[0];
  for (std::size_t i : plan.masked_indices) {
    if (i >= n) {
      throw DimensionError("mask index " + std::to_string(i) + " out of range for " +
                           std::to_string(n) + " patches");
    }
  }
  return nn::replace_rows(embeddings, plan.masked_indices, mask_token);
}

Tensor infonce_loss(const Tensor& class_out, const Tensor& candidates,
                    std::span<const std::size_t> positives, float temperature) {
  const std::size_t m = class_out.shape()[0];
  if (m < 1 || candidates.shape()[0] < 2) {
    throw DimensionError("InfoNCE needs at least 2 candidates");
  }
  if (class_out.shape()[1] != candidates.shape()[1]) {
    throw DimensionError("InfoNCE query and candidate widths differ");
  }
  Tensor logits = nn::matmul(class_out, nn::transpose(candidates));
  if (temperature != 1.0f) logits = nn::scale(logits, 1.0f / temperature);
  return nn::cross_entropy_rows(logits, positives);
}

Tensor infonce_loss(const Tensor& class_out, const Tensor& targets, float temperature) {
  const std::size_t m = class_out.shape()[0];
  if (m < 2) throw DimensionError("InfoNCE needs M >= 2 masked patches");
  if (targets.shape()[0] != m) throw DimensionError("InfoNCE expects one target per query");
  std::vector<std::size_t> pos(m);
  std::iota(pos.begin(), pos.end(), 0);
  return infonce_loss(class_out, targets, pos, temperature);
}

Tensor reconstruction_mse(const Tensor& recon, const Tensor& original) {
  if (recon.shape() != original.shape()) {
    throw DimensionError("reconstruction shape " + nn::shape_str(recon.shape()) +
                         " does not match target " + nn::shape_str(original.shape()));
  }
  return nn::mse(recon, original);
}

LossBreakdown joint_loss(float l_d, float l_g, double lambda) {
  // Same float path as the tensor version: scale then add.
  const float weighted = l_g * static_cast<float>(lambda);
  return {l_d, l_g, l_d + weighted};
}

Tensor joint_loss(const Tensor& l_d, const Tensor& l_g, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
  return nn::add(l_d, nn::scale(l_g, static_cast<float>(lambda)));
}

StepGraph pretrain_objective(const model::Model& model,
                             std::span<const features::PatchSet* const> batch,
                             std::span<const MaskPlan> plans, const PretrainConfig& config,
                             const std::vector<nn::Array>* fixed_targets) {
  if (batch.size() != plans.size()) throw ContractError("one mask plan per batch item");
  if (fixed_targets != nullptr && fixed_targets->size() != batch.size()) {
    throw ContractError("one fixed target block per batch item");
  }
  const auto& enc = model.encoder();
  const Tensor token = config.mask_mode == MaskMode::kLearnedToken
                           ? enc.mask_token.tensor()
                           : nn::constant(nn::Array({model.config().embed_dim}, 0.0f));
  std::vector<Tensor> masked_out, masked_emb, masked_patch, all_emb;
  std::vector<std::size_t> positives;
  std::size_t offset = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& set = *batch[b];
    if (set.grid.stride != features::kPatchSize) {
      throw ContractError("pretraining requires non-overlapping patches");
    }
    const auto& idx = plans[b].masked_indices;
    const Tensor patches = nn::constant(set.patches);
    const Tensor e = model::embed_patches(model, patches);
    const Tensor x = model::add_positional(model, apply_mask(e, plans[b], token));
    const Tensor o = model::encode(model, x);
    const Tensor target = fixed_targets != nullptr ? nn::constant((*fixed_targets)[b]) : nn::detach(e);
    masked_out.push_back(nn::gather_rows(o, idx));
    masked_emb.push_back(nn::gather_rows(target, idx));
    masked_patch.push_back(nn::gather_rows(patches, idx));
    if (config.negatives == Negatives::kAllPatches) {
      all_emb.push_back(target);
      for (std::size_t i : idx) positives.push_back(offset + i);
      offset += set.grid.count();
    }
  }
  const Tensor o = nn::concat_rows(masked_out);
  StepGraph g;
  g.masked = o.shape()[0];
  const Tensor cls = model::classify(model, o);
  const auto temp = static_cast<float>(config.temperature);
  if (config.negatives == Negatives::kAllPatches) {
    g.l_d = infonce_loss(cls, nn::concat_rows(all_emb), positives, temp);
  } else {
    g.l_d = infonce_loss(cls, nn::concat_rows(masked_emb), temp);
  }
  g.l_g = reconstruction_mse(model::reconstruct(model, o), nn::concat_rows(masked_patch));
  g.l_total = joint_loss(g.l_d, g.l_g, config.lambda);
  return g;
}

std::vector<nn::Array> target_embeddings(const model::Model& model,
                                         std::span<const features::PatchSet* const> batch) {
  std::vector<nn::Array> out;
  for (const auto* set : batch) {
    out.push_back(model::embed_patches(model, nn::constant(set->patches)).value());
  }
  return out;
}

std::string trace_header() { return "step,l_d,l_g,l_total,lr"; }

std::string trace_line(const TraceRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g", r.step, r.loss.l_d, r.loss.l_g,
                r.loss.l_total, r.lr);
  return buf;
}

std::vector<TraceRow> pretrain_loop(const std::vector<features::PatchSet>& corpus,
                                    model::Model& model, nn::Adam& optimizer,
                                    const PretrainConfig& config, std::uint64_t seed,
                                    LoopState& state, const LoopHooks& hooks) {
  config.validate();
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  for (const auto& set : corpus) {
    if (set.grid.stride != features::kPatchSize) {
      throw ContractError("pretraining requires non-overlapping (stride 16) patches");
    }
  }
  const std::size_t batch = std::min(config.batch_size, corpus.size());
  std::vector<TraceRow> trace;
  for (std::size_t step = state.step + 1; step <= config.steps; ++step) {
    Rng rng = make_stream(seed, step, 0x7072657472ull);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < batch; ++i) {
      std::swap(order[i], order[std::uniform_int_distribution<std::size_t>(i, order.size() - 1)(rng)]);
    }
    std::vector<const features::PatchSet*> items;
    std::vector<MaskPlan> plans;
    for (std::size_t i = 0; i < batch; ++i) {
      items.push_back(&corpus[order[i]]);
      plans.push_back(sample_mask(corpus[order[i]].grid.count(), config.mask_fraction, rng));
    }
    optimizer.set_lr(config.lr_at(step));
    optimizer.zero_grad();
    const StepGraph g = pretrain_objective(model, items, plans, config);
    nn::backward(g.l_total);
    optimizer.step();

    TraceRow row;
    row.step = step;
    row.loss = {g.l_d.item(), g.l_g.item(), g.l_total.item()};
    row.lr = optimizer.lr();
    trace.push_back(row);
    state.step = step;
    if (hooks.on_step) hooks.on_step(row);
    const bool cadence = config.checkpoint_every > 0 && step % config.checkpoint_every == 0;
    if (hooks.on_checkpoint && (cadence || step == config.steps)) hooks.on_checkpoint(step, optimizer);
  }
  return trace;
}

}  // namespace ssbrpe::pretrain

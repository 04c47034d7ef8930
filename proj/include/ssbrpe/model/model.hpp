// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ssbrpe/features/features.hpp"
#include "ssbrpe/numerics/adam.hpp"
#include "ssbrpe/numerics/tensor.hpp"
#include "ssbrpe/rng.hpp"

namespace ssbrpe::model {

struct ModelConfig {
  std::size_t embed_dim = 768;
  std::size_t n_layers = 12;
  std::size_t n_heads = 12;
  std::size_t mlp_ratio = 4;
  std::size_t max_patches = 512;
  float dropout = 0.0f;

  // 64-d, 2 layers, 4 heads, 256 positions.
  static ModelConfig desk();
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct EncoderBlock {
  nn::Parameter ln1_g, ln1_b;
  nn::Parameter wq, bq, wk, bk, wv, bv;
  nn::Parameter wo, bo;
  nn::Parameter ln2_g, ln2_b;
  nn::Parameter w1, b1, w2, b2;
};

struct EncoderState {
  nn::Parameter patch_w;  // 256 x D
  nn::Parameter patch_b;
  nn::Parameter pos;      // max_patches x D
  nn::Parameter mask_token;
  std::vector<EncoderBlock> blocks;
};

struct Heads {
  nn::Parameter reg_w, reg_b;  // D -> 1
  nn::Parameter cls_w, cls_b;  // D -> D
  nn::Parameter rec_w, rec_b;  // D -> 256
};

using NamedParameter = std::pair<std::string, nn::Parameter>;

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  EncoderState& encoder() { return encoder_; }
  const EncoderState& encoder() const { return encoder_; }
  Heads& heads() { return heads_; }
  const Heads& heads() const { return heads_; }

  // Stable order; names are checkpoint keys.
  std::vector<NamedParameter> named_parameters() const;
  std::vector<nn::Parameter> parameters() const;
  void zero_grad();
  std::size_t parameter_count() const;

 private:
  ModelConfig config_;
  EncoderState encoder_;
  Heads heads_;
};

struct ForwardOptions {
  bool train = false;
  Rng* rng = nullptr;  // required for dropout in train mode
  // Receives per-layer H x I x I attention weights when non-null.
  std::vector<nn::Array>* attention = nullptr;
};

nn::Tensor embed_patches(const Model& model, const nn::Tensor& patches);
nn::Tensor add_positional(const Model& model, const nn::Tensor& embeddings);
nn::Tensor encode(const Model& model, const nn::Tensor& x, const ForwardOptions& opts = {});
// 1 x D.
nn::Tensor mean_pool(const nn::Tensor& encoded);
// Scalar (shape {1}) in the log10 target domain.
nn::Tensor regress(const Model& model, const nn::Tensor& pooled);
nn::Tensor classify(const Model& model, const nn::Tensor& encoded_rows);
nn::Tensor reconstruct(const Model& model, const nn::Tensor& encoded_rows);

// patches (I x 256) -> scalar.
nn::Tensor forward_regression(const Model& model, const nn::Array& patches,
                              const ForwardOptions& opts = {});

// ---- checkpoints ---------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  features::FeatureConfig features;
  // Free-form run metadata (purpose, target, seed, resolved config, resume state).
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, nn::Array>> tensors;

  const nn::Array* find(const std::string& name) const;
};

Checkpoint make_checkpoint(const Model& model, const features::FeatureConfig& features,
                           nlohmann::json meta = nlohmann::json::object());
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

enum class LoadScope { kAll, kEncoderOnly };
// Copies matching tensors into `model`. Shapes must match exactly.
void load_parameters(Model& model, const Checkpoint& ckpt, LoadScope scope = LoadScope::kAll);
Model model_from_checkpoint(const Checkpoint& ckpt);

// Adam moments stored as "adam.m/<name>" and "adam.v/<name>" plus
// meta["optimizer"]; the optimizer must have been built over
// model.parameters().
void store_optimizer(Checkpoint& ckpt, const Model& model, const nn::Adam& opt);
void restore_optimizer(const Checkpoint& ckpt, const Model& model, nn::Adam& opt);

// Feature normalizer stored as "norm.mean" / "norm.std".
void store_normalizer(Checkpoint& ckpt, const features::FeatureNormalizer& norm);
features::FeatureNormalizer restore_normalizer(const Checkpoint& ckpt);

// Throws CompatibilityError naming both fingerprints.
void check_feature_compat(const Checkpoint& ckpt, const features::FeatureConfig& extractor);

}  // namespace ssbrpe::model

// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/finetune/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ssbrpe/errors.hpp"
#include "ssbrpe/parallel.hpp"

namespace ssbrpe::finetune {

using nn::Array;
using nn::Tensor;

std::string to_string(Target t) { return t == Target::kVolume ? "volume" : "rt60"; }

Target parse_target(const std::string& s) {
  if (s == "volume") return Target::kVolume;
  if (s == "rt60") return Target::kRt60;
  throw ConfigError("unknown target '" + s + "' (expected volume or rt60)");
}

// ---- augmentation --------------------------------------------------------------

void AugmentConfig::validate() const {
  if (!(sample_fraction >= 0.0 && sample_fraction <= 1.0)) {
    throw ConfigError("augment sample_fraction must lie in [0, 1]");
  }
  if (n_rects_min < 0 || n_rects_max < n_rects_min) throw ConfigError("n_rects range is empty");
  auto frac_ok = [](double lo, double hi) { return lo > 0.0 && lo <= hi && hi <= 1.0; };
  if (!frac_ok(rect_h_min, rect_h_max) || !frac_ok(rect_w_min, rect_w_max)) {
    throw ConfigError("rectangle fraction ranges must satisfy 0 < min <= max <= 1");
  }
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = nlohmann::json{{"sample_fraction", c.sample_fraction},
                     {"n_rects", {c.n_rects_min, c.n_rects_max}},
                     {"rect_h", {c.rect_h_min, c.rect_h_max}},
                     {"rect_w", {c.rect_w_min, c.rect_w_max}},
                     {"fill_value", c.fill_value}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  c.sample_fraction = j.value("sample_fraction", c.sample_fraction);
  c.fill_value = j.value("fill_value", c.fill_value);
  if (j.contains("n_rects")) {
    c.n_rects_min = j["n_rects"].at(0).get<int>();
    c.n_rects_max = j["n_rects"].at(1).get<int>();
  }
  if (j.contains("rect_h")) {
    c.rect_h_min = j["rect_h"].at(0).get<double>();
    c.rect_h_max = j["rect_h"].at(1).get<double>();
  }
  if (j.contains("rect_w")) {
    c.rect_w_min = j["rect_w"].at(0).get<double>();
    c.rect_w_max = j["rect_w"].at(1).get<double>();
  }
}

void apply_rect(Array& block, const Rect& r, float fill_value) {
  if (block.rank() != 2) throw DimensionError("augmentation expects 2-D blocks");
  const std::size_t f = block.shape()[0], t = block.shape()[1];
  const std::size_t r1 = std::min(f, r.row + r.height), c1 = std::min(t, r.col + r.width);
  for (std::size_t i = std::min(r.row, f); i < r1; ++i)
    for (std::size_t j = std::min(r.col, t); j < c1; ++j) block.at(i, j) = fill_value;
}

std::vector<std::size_t> feature_augment(std::vector<Array>& batch, const AugmentConfig& config,
                                         Rng& rng) {
  config.validate();
  if (batch.empty()) return {};
  for (const auto& b : batch) {
    if (b.shape() != batch.front().shape()) throw DimensionError("augment batch shapes differ");
  }
  const auto n = static_cast<std::size_t>(
      std::llround(static_cast<double>(batch.size()) * config.sample_fraction));
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(order[i], order[std::uniform_int_distribution<std::size_t>(i, order.size() - 1)(rng)]);
  }
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(chosen.begin(), chosen.end());

  const std::size_t f = batch.front().shape()[0], t = batch.front().shape()[1];
  std::uniform_int_distribution<int> count(config.n_rects_min, config.n_rects_max);
  std::uniform_real_distribution<double> hfrac(config.rect_h_min, config.rect_h_max);
  std::uniform_real_distribution<double> wfrac(config.rect_w_min, config.rect_w_max);
  for (std::size_t idx : chosen) {
    const int k = count(rng);
    for (int r = 0; r < k; ++r) {
      Rect rect;
      rect.height = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(hfrac(rng) * static_cast<double>(f))), 1, f);
      rect.width = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(wfrac(rng) * static_cast<double>(t))), 1, t);
      rect.row = std::uniform_int_distribution<std::size_t>(0, f - rect.height)(rng);
      rect.col = std::uniform_int_distribution<std::size_t>(0, t - rect.width)(rng);
      apply_rect(batch[idx], rect, config.fill_value);
    }
  }
  return chosen;
}

double transform_target(double y) {
  if (!(y > 0.0) || !std::isfinite(y)) throw DomainError("targets must be positive and finite");
  return std::log10(y);
}

double inverse_transform(double x) { return std::pow(10.0, x); }

// ---- configuration ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"max_epochs", c.max_epochs},   {"patience", c.patience},
                     {"lr", c.lr},                   {"lr_decay", c.lr_decay},
                     {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
                     {"target", to_string(c.target)}, {"augment", c.augment},
                     {"freeze_encoder", c.freeze_encoder}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.lr = j.value("lr", c.lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("target")) c.target = parse_target(j["target"].get<std::string>());
  c.augment = j.value("augment", c.augment);
  c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
}

// ---- data ----------------------------------------------------------------------

double label_of(const dataset::ManifestEntry& e, Target t) {
  return t == Target::kVolume ? e.volume_m3 : e.rt60_s;
}

std::vector<features::FeatureBlock> featurize(const std::vector<dataset::ManifestEntry>& entries,
                                              const std::filesystem::path& root,
                                              const features::FeatureConfig& config, int threads) {
  std::vector<features::FeatureBlock> out(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t i) {
    const auto clip = audio::read_wav_mono(root / entries[i].clip_path);
    if (clip.sample_rate != config.sample_rate) {
      throw DataError(entries[i].clip_path + " is not sampled at " +
                      std::to_string(config.sample_rate) + " Hz");
    }
    out[i] = features::extract_features(clip, config);
  });
  return out;
}

std::vector<Example> make_examples(const std::vector<dataset::ManifestEntry>& entries,
                                   std::vector<features::FeatureBlock> blocks,
                                   const features::FeatureNormalizer& normalizer, Target target) {
  if (entries.size() != blocks.size()) throw ContractError("one feature block per entry");
  std::vector<Example> out;
  out.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!normalizer.empty()) normalizer.apply(blocks[i]);
    out.push_back({std::move(blocks[i].values),
                   static_cast<float>(transform_target(label_of(entries[i], target)))});
  }
  return out;
}

// ---- training ------------------------------------------------------------------

void init_head_bias(model::Model& model, const std::vector<Example>& train) {
  if (train.empty()) throw DataError("training split is empty");
  double s = 0.0;
  for (const auto& e : train) s += e.target;
  model.heads().reg_b.value().fill(static_cast<float>(s / static_cast<double>(train.size())));
}

Tensor batch_loss(const model::Model& model, const std::vector<Array>& blocks,
                  std::span<const float> targets, const model::ForwardOptions& opts) {
  if (blocks.empty() || blocks.size() != targets.size()) {
    throw DimensionError("batch needs one target per block");
  }
  std::vector<Tensor> preds;
  preds.reserve(blocks.size());
  for (const auto& b : blocks) {
    const auto set = features::patchify(b, features::PatchMode::kFinetune);
    preds.push_back(nn::reshape(model::forward_regression(model, set.patches, opts), {1, 1}));
  }
  const Array y({targets.size(), 1}, std::vector<float>(targets.begin(), targets.end()));
  return nn::mse(nn::concat_rows(preds), nn::constant(y));
}

EpochStats finetune_epoch(model::Model& model, nn::Adam& optimizer,
                          const std::vector<Example>& train, const TrainConfig& config,
                          const AugmentConfig& augment, std::uint64_t seed, std::size_t epoch) {
  if (train.empty()) throw DataError("training split is empty");
  Rng rng = make_stream(seed, epoch, 0x66696e65ull);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  model::ForwardOptions opts;
  opts.train = true;
  opts.rng = &rng;
  EpochStats stats;
  double weighted = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    std::vector<Array> blocks;
    std::vector<float> targets;
    for (std::size_t i = start; i < end; ++i) {
      blocks.push_back(train[order[i]].block);
      targets.push_back(train[order[i]].target);
    }
    if (config.augment) feature_augment(blocks, augment, rng);
    optimizer.zero_grad();
    const Tensor loss = batch_loss(model, blocks, targets, opts);
    nn::backward(loss);
    optimizer.step();
    weighted += static_cast<double>(loss.item()) * static_cast<double>(end - start);
    ++stats.batches;
  }
  stats.train_mse = weighted / static_cast<double>(train.size());
  return stats;
}

std::vector<double> predict_log10(const model::Model& model, const std::vector<Example>& examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    const auto set = features::patchify(e.block, features::PatchMode::kFinetune);
    out.push_back(model::forward_regression(model, set.patches).item());
  }
  return out;
}

double evaluate_mse(const model::Model& model, const std::vector<Example>& examples,
                    std::size_t batch_size) {
  if (examples.empty()) throw DataError("evaluation split is empty");
  double weighted = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    std::vector<Array> blocks;
    std::vector<float> targets;
    for (std::size_t i = start; i < end; ++i) {
      blocks.push_back(examples[i].block);
      targets.push_back(examples[i].target);
    }
    weighted += batch_loss(model, blocks, targets).item64() * static_cast<double>(end - start);
  }
  return weighted / static_cast<double>(examples.size());
}

EarlyStopping::EarlyStopping(std::size_t patience, double lr_decay)
    : patience_(patience), lr_decay_(lr_decay) {
  if (patience_ < 1) throw ConfigError("patience must be >= 1");
}

EarlyStopping::Decision EarlyStopping::update(double val_mse) {
  ++epoch_;
  Decision d;
  if (epoch_ == 1 || val_mse < best_) {
    best_ = val_mse;
    best_epoch_ = epoch_;
    since_ = 0;
    d.improved = true;
    return d;
  }
  ++since_;
  const std::size_t half = std::max<std::size_t>(1, patience_ / 2);
  d.decay_lr = lr_decay_ < 1.0 && since_ % half == 0;
  d.stop = since_ >= patience_;
  return d;
}

std::string history_header() { return "epoch,train_mse,val_mse,lr"; }

std::string history_line(const HistoryRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g", r.epoch, r.train_mse, r.val_mse, r.lr);
  return buf;
}

TrainResult train_with_early_stopping(model::Model& model, const std::vector<Example>& train,
                                      const std::vector<Example>& val, const TrainConfig& config,
                                      const AugmentConfig& augment, std::uint64_t seed,
                                      const TrainHooks& hooks) {
  config.validate();
  if (config.augment) augment.validate();
  if (!hooks.run_epoch && train.empty()) throw DataError("training split is empty");
  if (!hooks.validate && val.empty()) throw DataError("validation split is empty");

  if (config.freeze_encoder) {
    for (auto& [name, p] : model.named_parameters()) {
      if (name.rfind("encoder.", 0) == 0) p.set_trainable(false);
    }
  }
  nn::AdamConfig ac;
  ac.lr = config.lr;
  ac.weight_decay = config.weight_decay;
  nn::Adam opt(model.parameters(), ac);
  EarlyStopping stopper(config.patience, config.lr_decay);

  auto params = model.named_parameters();
  std::vector<Array> best;
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = opt.lr();
    const double train_mse = hooks.run_epoch
                                 ? hooks.run_epoch(epoch)
                                 : finetune_epoch(model, opt, train, config, augment, seed, epoch).train_mse;
    const double val_mse = hooks.validate ? hooks.validate(epoch) : evaluate_mse(model, val);
    const auto d = stopper.update(val_mse);
    if (d.improved) {
      best.clear();
      for (const auto& [n, p] : params) best.push_back(p.value());
    }
    HistoryRow row{epoch, train_mse, val_mse, lr};
    result.history.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
    if (d.stop) {
      result.stopped_early = true;
      break;
    }
    if (d.decay_lr) opt.set_lr(opt.lr() * config.lr_decay);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].second.value() = best[i];
  if (config.freeze_encoder) {
    for (auto& [name, p] : params) p.set_trainable(true);
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_mse = stopper.best_value();
  return result;
}

// ---- inference -----------------------------------------------------------------

namespace {

const model::Checkpoint& checked(const model::Checkpoint& ckpt,
                                 const features::FeatureConfig& extractor) {
  model::check_feature_compat(ckpt, extractor);
  return ckpt;
}

}  // namespace

Predictor::Predictor(const model::Checkpoint& ckpt, const features::FeatureConfig& extractor)
    : model_(model::model_from_checkpoint(checked(ckpt, extractor))),
      features_(extractor),
      normalizer_(model::restore_normalizer(ckpt)) {
  if (ckpt.meta.contains("target")) target_ = parse_target(ckpt.meta["target"].get<std::string>());
}

double Predictor::predict_log10(const audio::AudioClip& clip) const {
  const auto block = features::extract_features(clip, features_, normalizer_.empty() ? nullptr : &normalizer_);
  const auto set = features::patchify(block.values, features::PatchMode::kFinetune);
  return model::forward_regression(model_, set.patches).item();
}

}  // namespace ssbrpe::finetune

// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "ssbrpe/errors.hpp"
#include "ssbrpe/finetune/finetune.hpp"

using namespace ssbrpe;
using namespace ssbrpe::finetune;
using nn::Array;
using testing::random_array;

namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.embed_dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_patches = 64;
  return c;
}

features::FeatureConfig toy_features() {
  features::FeatureConfig f;
  f.n_gammatone = 16;
  f.fmax_hz = 4000.0;
  f.phase_nfft = 256;
  f.phase_max_hz = 200.0;
  f.clip_seconds = 0.5;
  return f;
}

std::size_t count_changed(const Array& a, const Array& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

}  // namespace

TEST_SUITE("finetune") {

TEST_CASE("augment fraction zero leaves the batch alone") {
  Rng rng = make_stream(1, 0);
  std::vector<Array> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(random_array({20, 30}, rng, 1.0, 2.0));
  const auto before = batch;
  AugmentConfig cfg;
  cfg.sample_fraction = 0.0;
  CHECK(feature_augment(batch, cfg, rng).empty());
  for (int i = 0; i < 8; ++i) CHECK(batch[i] == before[i]);
}

TEST_CASE("augment touches a quarter of the batch") {
  Rng rng = make_stream(2, 0);
  std::vector<Array> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(random_array({20, 30}, rng, 1.0, 2.0));
  const auto before = batch;
  AugmentConfig cfg;
  const auto chosen = feature_augment(batch, cfg, rng);
  REQUIRE(chosen.size() == 2);
  std::size_t changed = 0;
  for (int i = 0; i < 8; ++i) {
    const bool touched = !(batch[i] == before[i]);
    changed += touched;
    CHECK(touched == std::binary_search(chosen.begin(), chosen.end(), std::size_t(i)));
    for (std::size_t k = 0; k < batch[i].size(); ++k) {
      if (batch[i][k] != before[i][k]) CHECK(batch[i][k] == 0.0f);
    }
  }
  CHECK(changed == 2);
}

TEST_CASE("rectangle fill") {
  Array block({20, 30}, 1.0f);
  apply_rect(block, {3, 5, 4, 6}, 0.0f);
  CHECK(count_changed(block, Array({20, 30}, 1.0f)) == 24);
  CHECK(block.at(3, 5) == 0.0f);
  CHECK(block.at(6, 10) == 0.0f);
  CHECK(block.at(7, 10) == 1.0f);

  Array edge({20, 30}, 1.0f);
  apply_rect(edge, {18, 27, 5, 5}, -1.0f);
  CHECK(count_changed(edge, Array({20, 30}, 1.0f)) == 6);
}

TEST_CASE("target transform") {
  CHECK(transform_target(1000.0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(transform_target(1.0) == 0.0);
  for (double y : {0.2, 12.0, 21000.0}) {
    CHECK(inverse_transform(transform_target(y)) == doctest::Approx(y).epsilon(1e-12));
  }
  CHECK_THROWS_AS(transform_target(0.0), DomainError);
  CHECK_THROWS_AS(transform_target(-4.0), DomainError);
  CHECK(parse_target("rt60") == Target::kRt60);
  CHECK_THROWS_AS(parse_target("area"), ConfigError);
}

TEST_CASE("frozen encoder with a linear head fits two points") {
  model::Model m(tiny(), 3);
  Rng rng = make_stream(3, 0);
  std::vector<Example> train{{random_array({16, 16}, rng), 1.0f},
                             {random_array({16, 16}, rng), 3.0f}};
  const auto encoder_before = m.encoder().patch_w.value();
  TrainConfig cfg;
  cfg.max_epochs = 400;
  cfg.patience = 400;
  cfg.lr = 3e-2;
  cfg.weight_decay = 0.0;
  cfg.batch_size = 2;
  cfg.augment = false;
  cfg.freeze_encoder = true;
  const auto result = train_with_early_stopping(m, train, train, cfg, {}, 3);
  CHECK(result.best_val_mse < 1e-3);
  CHECK(evaluate_mse(m, train) == doctest::Approx(result.best_val_mse).epsilon(1e-6));
  CHECK(m.encoder().patch_w.value() == encoder_before);
}

TEST_CASE("zero learning rate keeps parameters") {
  model::Model m(tiny(), 4);
  Rng rng = make_stream(4, 0);
  std::vector<Example> train;
  for (int i = 0; i < 4; ++i) train.push_back({random_array({16, 26}, rng), float(i)});
  std::vector<Array> before;
  for (const auto& p : m.parameters()) before.push_back(p.value());
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.0;
  cfg.batch_size = 2;
  nn::AdamConfig ac;
  ac.lr = 0.0;
  nn::Adam opt(m.parameters(), ac);
  finetune_epoch(m, opt, train, cfg, {}, 4, 1);
  const auto after = m.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].value() == before[i]);
}

TEST_CASE("duplicated batch has the same loss") {
  model::Model m(tiny(), 5);
  Rng rng = make_stream(5, 0);
  std::vector<Array> blocks{random_array({16, 16}, rng), random_array({16, 26}, rng)};
  std::vector<float> targets{0.5f, 2.0f};
  const double once = batch_loss(m, blocks, targets).item64();
  auto twice = blocks;
  twice.insert(twice.end(), blocks.begin(), blocks.end());
  std::vector<float> t2{0.5f, 2.0f, 0.5f, 2.0f};
  CHECK(batch_loss(m, twice, t2).item64() == doctest::Approx(once).epsilon(1e-6));
  CHECK_THROWS_AS(batch_loss(m, blocks, std::vector<float>{1.0f}), DimensionError);
}

TEST_CASE("early stopping on a scripted curve") {
  const std::vector<double> curve{5, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4};
  model::Model m(tiny(), 6);
  TrainConfig cfg;
  cfg.max_epochs = 150;
  cfg.patience = 10;
  TrainHooks hooks;
  hooks.run_epoch = [](std::size_t) { return 1.0; };
  hooks.validate = [&](std::size_t e) { return curve.at(e - 1); };
  std::vector<double> lrs;
  hooks.on_epoch = [&](const HistoryRow& r) { lrs.push_back(r.lr); };
  const auto r = train_with_early_stopping(m, {}, {}, cfg, {}, 6, hooks);
  CHECK(r.stopped_early);
  CHECK(r.history.size() == 12);
  CHECK(r.best_epoch == 2);
  CHECK(r.best_val_mse == 4.0);
  CHECK(lrs.at(6) == doctest::Approx(cfg.lr));
  CHECK(lrs.at(7) == doctest::Approx(cfg.lr * 0.5));
  CHECK(lrs.at(11) == doctest::Approx(cfg.lr * 0.5));
}

TEST_CASE("monotone curve runs to max_epochs") {
  model::Model m(tiny(), 7);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  TrainHooks hooks;
  hooks.run_epoch = [](std::size_t) { return 1.0; };
  hooks.validate = [](std::size_t e) { return 10.0 / double(e); };
  const auto r = train_with_early_stopping(m, {}, {}, cfg, {}, 7, hooks);
  CHECK_FALSE(r.stopped_early);
  CHECK(r.history.size() == 30);
  CHECK(r.best_epoch == 30);
}

TEST_CASE("best parameters are restored") {
  model::Model m(tiny(), 8);
  Rng rng = make_stream(8, 0);
  std::vector<Example> train, val;
  for (int i = 0; i < 6; ++i) train.push_back({random_array({16, 16}, rng), float(i % 3)});
  for (int i = 0; i < 3; ++i) val.push_back({random_array({16, 16}, rng), float(i)});
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.patience = 3;
  cfg.lr = 1e-2;
  cfg.batch_size = 3;
  const auto r = train_with_early_stopping(m, train, val, cfg, {}, 8);
  CHECK(r.history.size() >= r.best_epoch);
  CHECK(evaluate_mse(m, val) == doctest::Approx(r.best_val_mse).epsilon(1e-7));
  CHECK(history_line({3, 0.5, 0.25, 1e-4}) == "3,0.5,0.25,0.0001");
  CHECK(history_header() == "epoch,train_mse,val_mse,lr");
}

TEST_CASE("predictor") {
  const auto fcfg = toy_features();
  model::Model m(tiny(), 9);
  m.heads().reg_w.value().fill(0.0f);
  m.heads().reg_b.value().fill(3.0f);
  const auto ckpt = model::make_checkpoint(m, fcfg, {{"target", "volume"}});
  Predictor p(ckpt, fcfg);
  Rng rng = make_stream(9, 0);
  audio::AudioClip clip;
  clip.sample_rate = fcfg.sample_rate;
  std::normal_distribution<float> g;
  for (int i = 0; i < 8000; ++i) clip.samples.push_back(0.1f * g(rng));
  CHECK(p.predict(clip) == doctest::Approx(1000.0).epsilon(1e-5));
  CHECK(p.predict_log10(clip) == p.predict_log10(clip));
  CHECK(p.target() == Target::kVolume);

  auto other = fcfg;
  other.hop_s = 0.02;
  CHECK_THROWS_AS(Predictor(ckpt, other), CompatibilityError);
}

TEST_CASE("head bias starts at the mean target") {
  model::Model m(tiny(), 10);
  std::vector<Example> train{{Array({16, 16}), 1.0f}, {Array({16, 16}), 4.0f}};
  init_head_bias(m, train);
  CHECK(m.heads().reg_b.value()[0] == 2.5f);
  CHECK_THROWS_AS(init_head_bias(m, {}), DataError);
}

TEST_CASE("config json round trip") {
  TrainConfig c;
  c.target = Target::kRt60;
  c.patience = 4;
  nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  CHECK(back.target == Target::kRt60);
  CHECK(back.patience == 4);
  AugmentConfig a;
  a.n_rects_max = 2;
  nlohmann::json ja = a;
  CHECK(ja.get<AugmentConfig>().n_rects_max == 2);
  c.lr_decay = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

}  // TEST_SUITE

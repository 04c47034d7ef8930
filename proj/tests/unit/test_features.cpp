// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "ssbrpe/errors.hpp"
#include "ssbrpe/features/features.hpp"

using namespace ssbrpe;
using namespace ssbrpe::features;

namespace {

audio::AudioClip tone(double hz, double seconds, float amp = 0.5f) {
  audio::AudioClip c;
  c.samples.resize(static_cast<std::size_t>(seconds * 16000));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = amp * float(std::sin(2 * M_PI * hz * double(i) / 16000));
  }
  return c;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("erb rate scale") {
  CHECK(erb_rate(1000.0) == doctest::Approx(15.62).epsilon(0.01 / 15.62));
  CHECK(erb_rate_to_hz(erb_rate(1234.5)) == doctest::Approx(1234.5).epsilon(1e-12));
  const auto two = erb_center_frequencies(2, 100, 8000);
  CHECK(two == std::vector<double>{100.0, 8000.0});
  const auto cf = erb_center_frequencies(64, 50, 8000);
  const double step = erb_rate(cf[1]) - erb_rate(cf[0]);
  for (std::size_t i = 1; i < cf.size(); ++i) {
    CHECK(cf[i] > cf[i - 1]);
    CHECK(std::abs(erb_rate(cf[i]) - erb_rate(cf[i - 1]) - step) < 1e-9);
  }
  CHECK_THROWS_AS(erb_center_frequencies(1, 50, 8000), DomainError);
  CHECK_THROWS_AS(erb_center_frequencies(4, 500, 100), DomainError);
}

TEST_CASE("gammatone selectivity") {
  FeatureConfig cfg;
  cfg.clip_seconds = 0;
  const auto cf = erb_center_frequencies(cfg.n_gammatone, cfg.fmin_hz, cfg.fmax_hz);
  for (int k : {8, 20, 32, 45, 58}) {
    const auto g = gammatone_spectrogram(tone(cf[k], 0.5), cfg);
    int best = 0;
    double best_e = -1;
    for (std::size_t ch = 0; ch < g.rows(); ++ch) {
      double e = 0;
      for (float v : g.row(ch)) e += std::pow(10.0, v);
      if (e > best_e) {
        best_e = e;
        best = static_cast<int>(ch);
      }
    }
    CAPTURE(k);
    CHECK(best == k);
  }
}

TEST_CASE("gammatone of silence and framing") {
  FeatureConfig cfg;
  audio::AudioClip silent{std::vector<float>(64000, 0.0f), 16000};
  const auto g = gammatone_spectrogram(silent, cfg);
  CHECK(g.shape() == nn::Shape{64, 398});
  for (float v : g.vec()) REQUIRE(v == doctest::Approx(-10.0f));
  audio::AudioClip tiny{std::vector<float>(100, 0.0f), 16000};
  CHECK_THROWS_AS(gammatone_spectrogram(tiny, cfg), DataError);
}

TEST_CASE("phase branch rows and range") {
  FeatureConfig cfg;
  CHECK(cfg.n_phase_rows() == 33);
  audio::AudioClip silent{std::vector<float>(64000, 0.0f), 16000};
  const auto z = lowfreq_phase_spectrogram(silent, cfg);
  CHECK(z.shape() == nn::Shape{33, 398});
  for (float v : z.vec()) REQUIRE(v == 0.0f);
  Rng rng = make_stream(1, 0);
  audio::AudioClip noise{testing::random_array({64000}, rng).vec(), 16000};
  const auto p = lowfreq_phase_spectrogram(noise, cfg);
  for (float v : p.vec()) REQUIRE((v >= -M_PI && v <= M_PI));
}

TEST_CASE("assembled block layout") {
  FeatureConfig cfg;
  const auto b = extract_features(tone(440, 4.0), cfg);
  CHECK(b.rows() == 97);
  CHECK(b.frames() == 398);
  CHECK(b.n_gamma == 64);
  CHECK(b.n_phase == 33);
  std::set<std::pair<int, int>> keys;
  for (const auto& r : b.row_map) keys.insert({int(r.kind), r.index});
  CHECK(keys.size() == 97);
  CHECK(b.values.all_finite());
  CHECK_THROWS_AS(assemble_feature_block(nn::Array({4, 10}), nn::Array({2, 11}), cfg), DimensionError);
}

TEST_CASE("extract crops and pads to the clip length") {
  FeatureConfig cfg;
  const auto a = extract_features(tone(300, 3.0), cfg);
  const auto b = extract_features(tone(300, 5.0), cfg);
  CHECK(a.frames() == 398);
  CHECK(b.frames() == 398);
}

TEST_CASE("normalizer maps constant rows to zero and leaves phase rows") {
  FeatureConfig cfg;
  cfg.clip_seconds = 0;
  const auto raw = extract_features(tone(700, 0.5), cfg);
  auto flat = raw;
  for (std::size_t t = 0; t < flat.frames(); ++t) flat.values.at(0, t) = 2.5f;
  const std::vector<FeatureBlock> set{flat};
  const auto norm = FeatureNormalizer::fit(set);
  auto out = flat;
  norm.apply(out);
  for (std::size_t t = 0; t < out.frames(); ++t) CHECK(out.values.at(0, t) == 0.0f);
  for (std::size_t r = 64; r < 97; ++r)
    for (std::size_t t = 0; t < out.frames(); ++t) REQUIRE(out.values.at(r, t) == flat.values.at(r, t));
  FeatureNormalizer wrong;
  wrong.mean.assign(3, 0.0f);
  wrong.stddev.assign(3, 1.0f);
  CHECK_THROWS_AS(wrong.apply(out), CompatibilityError);
}

TEST_CASE("patch grid arithmetic") {
  const nn::Array block({64, 96}, 1.0f);
  const auto pre = patchify(block, PatchMode::kPretrain);
  CHECK(pre.grid.count() == 24);
  CHECK(pre.grid.rows == 4);
  CHECK(pre.grid.cols == 6);
  const auto fine = patchify(block, PatchMode::kFinetune);
  // Exact cover: 64 -> 66 (6 rows), 96 already satisfies (96-16) % 10 == 0 (9 cols).
  CHECK(fine.grid.pad_f == 2);
  CHECK(fine.grid.pad_t == 0);
  CHECK(fine.grid.count() == 54);
  const auto small = make_grid(5, 3, PatchMode::kFinetune);
  CHECK(small.count() == 1);
  CHECK(small.pad_f == 11);
}

TEST_CASE("pretrain patchify round trip is bit exact") {
  Rng rng = make_stream(2, 0);
  const auto block = testing::random_array({97, 398}, rng);
  const auto set = patchify(block, PatchMode::kPretrain);
  const auto back = unpatchify(set);
  REQUIRE(back.shape() == nn::Shape{112, 400});
  for (std::size_t r = 0; r < 112; ++r)
    for (std::size_t c = 0; c < 400; ++c) {
      const float want = (r < 97 && c < 398) ? block.at(r, c) : 0.0f;
      REQUIRE(std::bit_cast<std::uint32_t>(back.at(r, c)) == std::bit_cast<std::uint32_t>(want));
    }
  CHECK_THROWS_AS(unpatchify(patchify(block, PatchMode::kFinetune)), ContractError);
}

TEST_CASE("feature block file round trip") {
  FeatureConfig cfg;
  const auto b = extract_features(tone(250, 1.0), cfg);
  const auto path = std::filesystem::temp_directory_path() / "ssbrpe_block.ssbf";
  write_feature_block(path, b);
  const auto back = read_feature_block(path);
  CHECK(nn::bitwise_equal(back.values, b.values));
  CHECK(back.row_map == b.row_map);
  CHECK(back.n_gamma == 64);
  CHECK(back.frame_hop_s == b.frame_hop_s);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}

TEST_CASE("config fingerprint tracks every field") {
  FeatureConfig a, b;
  CHECK(a.fingerprint() == b.fingerprint());
  b.phase_max_hz = 400;
  CHECK(a.fingerprint() != b.fingerprint());
  FeatureConfig c = nlohmann::json(a).get<FeatureConfig>();
  CHECK(c.fingerprint() == a.fingerprint());
}

}  // TEST_SUITE

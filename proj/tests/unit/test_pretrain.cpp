// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include <cmath>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "ssbrpe/errors.hpp"
#include "ssbrpe/pretrain/pretrain.hpp"

using namespace ssbrpe;
using namespace ssbrpe::pretrain;
using nn::Array;
using nn::Tensor;
using testing::random_array;

namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.embed_dim = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_patches = 64;
  return c;
}

std::vector<features::PatchSet> toy_corpus(std::size_t n, std::uint64_t seed) {
  std::vector<features::PatchSet> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_stream(seed, i);
    // Smooth rows so patches carry learnable structure.
    Array block({32, 64});
    const float f = std::uniform_real_distribution<float>(0.05f, 0.3f)(rng);
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 64; ++c) block.at(r, c) = std::sin(f * float(c) + 0.2f * float(r));
    out.push_back(features::patchify(block, features::PatchMode::kPretrain));
  }
  return out;
}

double infonce_oracle(const Array& c, const Array& t) {
  const std::size_t m = c.rows(), d = c.cols();
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> s(m);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < d; ++k) s[j] += double(c.at(i, k)) * t.at(j, k);
    double z = 0;
    for (double v : s) z += std::exp(v);
    total += -std::log(std::exp(s[i]) / z);
  }
  return total / double(m);
}

}  // namespace

TEST_SUITE("pretrain") {

TEST_CASE("mask sampling count and clamp") {
  Rng rng = make_stream(1, 0);
  const auto p = sample_mask(24, 0.5, rng);
  CHECK(p.mask_count == 12);
  CHECK(std::set<std::size_t>(p.masked_indices.begin(), p.masked_indices.end()).size() == 12);
  CHECK(std::is_sorted(p.masked_indices.begin(), p.masked_indices.end()));
  CHECK(sample_mask(24, 1e-9, rng).mask_count == 1);
  CHECK(sample_mask(24, 0.999, rng).mask_count == 23);
  CHECK_THROWS_AS(sample_mask(1, 0.5, rng), DomainError);
}

TEST_CASE("mask sampling is uniform") {
  Rng rng = make_stream(2, 0);
  std::vector<int> hits(24, 0);
  for (int d = 0; d < 10000; ++d)
    for (std::size_t i : sample_mask(24, 0.5, rng).masked_indices) ++hits[i];
  for (int h : hits) CHECK(std::abs(h / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("apply_mask replaces exactly the masked rows") {
  Rng rng = make_stream(3, 0);
  const Array e = random_array({6, 4}, rng);
  MaskPlan one{{2}, 1};
  const Array tok = random_array({4}, rng);
  const Array out = apply_mask(nn::constant(e), one, nn::constant(tok)).value();
  int differing = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    bool same = true;
    for (std::size_t c = 0; c < 4; ++c) same = same && out.at(r, c) == e.at(r, c);
    differing += same ? 0 : 1;
    if (r != 2) {
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(std::bit_cast<std::uint32_t>(out.at(r, c)) == std::bit_cast<std::uint32_t>(e.at(r, c)));
    }
  }
  CHECK(differing == 1);
  MaskPlan two{{0, 5}, 2};
  const Array z = apply_mask(nn::constant(e), two, nn::constant(Array({4}, 0.0f))).value();
  for (std::size_t c = 0; c < 4; ++c) CHECK((z.at(0, c) == 0.0f && z.at(5, c) == 0.0f));
  MaskPlan bad{{6}, 1};
  CHECK_THROWS_AS(apply_mask(nn::constant(e), bad, nn::constant(tok)), DimensionError);
}

TEST_CASE("InfoNCE identities") {
  for (std::size_t m : {2u, 4u, 16u}) {
    const Array ones({m, 3}, 0.5f);
    const float l = infonce_loss(nn::constant(ones), nn::constant(ones)).item();
    CHECK(std::abs(l - std::log(double(m))) < 1e-6);
  }
  Array c({4, 4}, 0.0f), t({4, 4}, 0.0f);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 4; ++k) c.at(i, k) = -5.0f;
    c.at(i, i) = 5.0f;
    t.at(i, i) = 2.0f;  // c_i . t_i = 10, c_i . t_j = -10
  }
  for (float& v : t.vec()) v *= 2.0f;  // +-20
  CHECK(infonce_loss(nn::constant(c), nn::constant(t)).item() < 1e-6);
  Rng rng = make_stream(4, 0);
  const Array a = random_array({3, 5}, rng), b = random_array({3, 5}, rng);
  CHECK(infonce_loss(nn::constant(a), nn::constant(b)).item() ==
        doctest::Approx(infonce_oracle(a, b)).epsilon(1e-5));
  CHECK_THROWS_AS(infonce_loss(nn::constant(Array({1, 5})), nn::constant(Array({1, 5}))), DimensionError);
}

TEST_CASE("targets receive no gradient") {
  Rng rng = make_stream(5, 0);
  nn::Parameter q(random_array({4, 6}, rng)), e(random_array({4, 6}, rng));
  nn::backward(infonce_loss(q.tensor(), nn::detach(e.tensor())));
  for (float g : e.grad().vec()) CHECK(g == 0.0f);
  CHECK_FALSE(q.grad().empty());
}

TEST_CASE("reconstruction MSE") {
  Rng rng = make_stream(6, 0);
  const Array x = random_array({3, 256}, rng);
  CHECK(reconstruction_mse(nn::constant(x), nn::constant(x)).item() == 0.0f);
  Array y = x;
  for (float& v : y.vec()) v += 1.0f;
  CHECK(reconstruction_mse(nn::constant(y), nn::constant(x)).item() == doctest::Approx(1.0f).epsilon(1e-6));
  const Array z = random_array({3, 256}, rng);
  double oracle = 0;
  for (std::size_t i = 0; i < x.size(); ++i) oracle += (double(z[i]) - x[i]) * (double(z[i]) - x[i]);
  oracle /= double(x.size());
  CHECK(reconstruction_mse(nn::constant(z), nn::constant(x)).item() == doctest::Approx(oracle).epsilon(1e-6));
  CHECK_THROWS_AS(reconstruction_mse(nn::constant(Array({2, 256})), nn::constant(Array({3, 256}))),
                  DimensionError);
}

TEST_CASE("joint loss arithmetic") {
  CHECK(joint_loss(1.0f, 0.5f, 10.0).l_total == 6.0f);
  CHECK(joint_loss(0.37f, 0.0f, 7.0).l_total == 0.37f);
  CHECK(joint_loss(0.0f, 0.3f, 10.0).l_total == 0.3f * 10.0f);
  const Tensor ld = nn::constant(Array::scalar(0.731f)), lg = nn::constant(Array::scalar(0.0917f));
  CHECK(joint_loss(ld, lg, 10.0).item() == joint_loss(0.731f, 0.0917f, 10.0).l_total);
}

TEST_CASE("joint pretrain loss gradient with lambda 10") {
  model::Model m(tiny(), 7);
  Rng rng = make_stream(7, 0);
  for (auto& [n, p] : m.named_parameters()) {
    if (n.find("mask_token") != std::string::npos) p.value() = random_array(p.shape(), rng, -0.5f, 0.5f);
  }
  features::PatchSet a{random_array({6, 256}, rng, -0.3f, 0.3f), {}}, b{random_array({6, 256}, rng, -0.3f, 0.3f), {}};
  a.grid = b.grid = features::make_grid(32, 48, features::PatchMode::kPretrain);
  const std::vector<const features::PatchSet*> batch{&a, &b};
  const std::vector<MaskPlan> plans{{{1, 4}, 2}, {{0, 2, 5}, 3}};
  PretrainConfig cfg;
  REQUIRE(cfg.lambda == 10.0);
  // Stop-gradient targets are held at their unperturbed values.
  const auto targets = target_embeddings(m, batch);
  CHECK(nn::bitwise_equal(pretrain_objective(m, batch, plans, cfg).l_total.value(),
                          pretrain_objective(m, batch, plans, cfg, &targets).l_total.value()));
  const auto r = testing::grad_check(m.named_parameters(), [&] {
    return pretrain_objective(m, batch, plans, cfg, &targets).l_total;
  });
  CHECK_MESSAGE(r.max_rel_err < 1e-3, r.worst);
}

TEST_CASE("all-patches negatives") {
  model::Model m(tiny(), 8);
  auto corpus = toy_corpus(2, 8);
  const std::vector<const features::PatchSet*> batch{&corpus[0], &corpus[1]};
  const std::vector<MaskPlan> plans{{{1, 4}, 2}, {{0, 2}, 2}};
  PretrainConfig cfg;
  cfg.negatives = Negatives::kAllPatches;
  const auto g = pretrain_objective(m, batch, plans, cfg);
  CHECK(g.masked == 4);
  CHECK(std::isfinite(g.l_d.item()));
}

TEST_CASE("pretrain loop decreases the loss on one clip") {
  model::Model m(tiny(), 9);
  const auto corpus = toy_corpus(1, 9);
  PretrainConfig cfg;
  cfg.steps = 200;
  cfg.lr = 1e-3;
  cfg.batch_size = 1;
  nn::Adam opt(m.parameters(), adam_config(cfg));
  LoopState st;
  const auto trace = pretrain_loop(corpus, m, opt, cfg, 1, st);
  REQUIRE(trace.size() == 200);
  double prev = 1e30;
  for (std::size_t w = 0; w < 4; ++w) {
    double avg = 0;
    for (std::size_t i = 0; i < 50; ++i) avg += trace[w * 50 + i].loss.l_total;
    avg /= 50;
    CHECK(avg < prev);
    prev = avg;
  }
}

TEST_CASE("lambda zero traces l_total == l_d") {
  model::Model m(tiny(), 10);
  const auto corpus = toy_corpus(3, 10);
  PretrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.steps = 10;
  cfg.batch_size = 2;
  nn::Adam opt(m.parameters(), adam_config(cfg));
  LoopState st;
  for (const auto& row : pretrain_loop(corpus, m, opt, cfg, 2, st)) CHECK(row.loss.l_total == row.loss.l_d);
}

TEST_CASE("resume reproduces the next step bitwise") {
  const auto corpus = toy_corpus(4, 11);
  PretrainConfig cfg;
  cfg.steps = 6;
  cfg.batch_size = 2;
  cfg.lr = 1e-3;
  model::Model full(tiny(), 12);
  nn::Adam opt_full(full.parameters(), adam_config(cfg));
  LoopState s_full;
  const auto trace = pretrain_loop(corpus, full, opt_full, cfg, 3, s_full);

  model::Model part(tiny(), 12);
  nn::Adam opt_part(part.parameters(), adam_config(cfg));
  PretrainConfig half = cfg;
  half.steps = 3;
  LoopState s_part;
  pretrain_loop(corpus, part, opt_part, half, 3, s_part);
  auto ck = model::make_checkpoint(part, {});
  model::store_optimizer(ck, part, opt_part);
  const auto path = std::filesystem::temp_directory_path() / "ssbrpe_resume.ssbc";
  model::save_checkpoint(path, ck);
  const auto loaded = model::load_checkpoint(path);
  model::Model resumed = model::model_from_checkpoint(loaded);
  nn::Adam opt_res(resumed.parameters(), adam_config(cfg));
  model::restore_optimizer(loaded, resumed, opt_res);
  LoopState s_res{3};
  const auto rest = pretrain_loop(corpus, resumed, opt_res, cfg, 3, s_res);
  REQUIRE(rest.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rest[i].step == trace[i + 3].step);
    CHECK(trace_line(rest[i]) == trace_line(trace[i + 3]));
  }
  std::filesystem::remove(path);
}

TEST_CASE("loop preconditions") {
  model::Model m(tiny(), 13);
  PretrainConfig cfg;
  nn::Adam opt(m.parameters(), adam_config(cfg));
  LoopState st;
  CHECK_THROWS_AS(pretrain_loop({}, m, opt, cfg, 1, st), DataError);
  const std::vector<features::PatchSet> overlapping{
      features::patchify(Array({32, 64}, 0.5f), features::PatchMode::kFinetune)};
  CHECK_THROWS_AS(pretrain_loop(overlapping, m, opt, cfg, 1, st), ContractError);
  cfg.mask_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("trace format") {
  CHECK(trace_header() == "step,l_d,l_g,l_total,lr");
  TraceRow r{3, {1.0f, 0.5f, 6.0f}, 1e-4};
  CHECK(trace_line(r) == "3,1,0.5,6,0.0001");
}

}  // TEST_SUITE

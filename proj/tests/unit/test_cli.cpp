// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ssbrpe/audio/audio.hpp"
#include "ssbrpe/cli/cli.hpp"
#include "ssbrpe/dataset/dataset.hpp"
#include "ssbrpe/errors.hpp"

using namespace ssbrpe;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ssbrpe_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Result {
  int code;
  std::string out, err;
};

// Small clips keep every command fast.
const std::vector<std::string> kSmall{"--set", "features.clip_seconds=1",
                                      "--set", "features.n_gammatone=16",
                                      "--set", "model.max_patches=128",
                                      "--set", "pretrain.batch_size=2"};

Result run(const fs::path& workdir, std::vector<std::string> args) {
  std::vector<std::string> full{"ssbrpe", "--workdir", workdir.string()};
  full.insert(full.end(), kSmall.begin(), kSmall.end());
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream s(line);
    std::string cell;
    while (std::getline(s, cell, ',')) f.push_back(cell);
    rows.push_back(f);
  }
  return rows;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("assignments and layering") {
  const auto patch = cli::parse_assignment("train.lr=0.003");
  CHECK(patch["train"]["lr"].get<double>() == 0.003);
  CHECK(cli::parse_assignment("train.target=rt60")["train"]["target"] == "rt60");
  CHECK_THROWS_AS(cli::parse_assignment("novalue"), ConfigError);

  const auto dir = temp_dir("layers");
  std::ofstream(dir / "a.json") << R"({"seed": 5, "train": {"lr": 0.01, "patience": 3}})";
  std::ofstream(dir / "b.json") << R"({"train": {"lr": 0.02}})";
  const auto c = cli::resolve_config({dir / "a.json", dir / "b.json"},
                                     cli::parse_assignment("train.patience=7"));
  CHECK(c.seed == 5);
  CHECK(c.train.lr == 0.02);
  CHECK(c.train.patience == 7);
  CHECK(c.model.max_patches == 512);
  CHECK(c.model.embed_dim == 64);
  std::ofstream(dir / "bad.json") << R"({"trian": {}})";
  CHECK_THROWS_AS(cli::resolve_config({dir / "bad.json"}, {}), ConfigError);
  CHECK_THROWS_AS(cli::resolve_config({dir / "missing.json"}, {}), ConfigError);
}

TEST_CASE("dataset-synth writes a deterministic manifest") {
  const auto a = temp_dir("synth_a"), b = temp_dir("synth_b");
  auto r = run(a, {"--seed", "3", "dataset-synth", "--rooms", "4", "--clips-per-room", "2"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(dataset::read_manifest(a / "corpus/manifest.jsonl").size() == 8);
  CHECK(fs::exists(a / "corpus/config.resolved.json"));
  r = run(b, {"--seed", "3", "--threads", "2", "dataset-synth", "--rooms", "4", "--clips-per-room", "2"});
  REQUIRE(r.code == 0);
  CHECK(slurp(a / "corpus/manifest.jsonl") == slurp(b / "corpus/manifest.jsonl"));
  CHECK(slurp(a / "corpus/clips/room0001_c01.wav") == slurp(b / "corpus/clips/room0001_c01.wav"));
}

TEST_CASE("keep-room-fraction halves training rooms only") {
  const auto full = temp_dir("keep_full"), half = temp_dir("keep_half");
  auto rooms_by_split = [](const fs::path& w) {
    std::map<dataset::Split, std::set<std::string>> m;
    for (const auto& e : dataset::read_manifest(w / "corpus/manifest.jsonl")) m[e.split].insert(e.room_id);
    return m;
  };
  const std::vector<std::string> common{"--set", "synth.train_fraction=0.6", "--set",
                                        "synth.val_fraction=0.2", "--set", "synth.test_fraction=0.2"};
  auto args = common;
  args.insert(args.end(), {"dataset-synth", "--rooms", "20", "--clips-per-room", "1"});
  REQUIRE(run(full, args).code == 0);
  args.insert(args.end(), {"--keep-room-fraction", "0.5"});
  REQUIRE(run(half, args).code == 0);
  auto f = rooms_by_split(full), h = rooms_by_split(half);
  CHECK(f[dataset::Split::kTrain].size() == 12);
  CHECK(h[dataset::Split::kTrain].size() == 6);
  CHECK(h[dataset::Split::kVal] == f[dataset::Split::kVal]);
  CHECK(h[dataset::Split::kTest] == f[dataset::Split::kTest]);
}

TEST_CASE("pretrain trace, lambda zero and resume") {
  const auto w = temp_dir("pretrain");
  REQUIRE(run(w, {"dataset-synth", "--rooms", "3", "--clips-per-room", "1", "--unlabeled-clips", "3"}).code == 0);
  auto r = run(w, {"pretrain", "--steps", "4", "--lambda", "0"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto rows = csv_rows(w / "pretrain/trace.csv");
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i][0] == std::to_string(i + 1));
    CHECK(rows[i][3] == rows[i][1]);
  }
  r = run(w, {"pretrain", "--steps", "6", "--lambda", "0", "--resume"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  rows = csv_rows(w / "pretrain/trace.csv");
  REQUIRE(rows.size() == 6);
  CHECK(rows[4][0] == "5");
  CHECK(rows[5][0] == "6");

  const auto fresh = temp_dir("pretrain_fresh");
  fs::copy(w / "corpus", fresh / "corpus", fs::copy_options::recursive);
  REQUIRE(run(fresh, {"pretrain", "--steps", "6", "--lambda", "0"}).code == 0);
  CHECK(slurp(fresh / "pretrain/trace.csv") == slurp(w / "pretrain/trace.csv"));
  CHECK(slurp(fresh / "pretrain/checkpoint.ssbc") == slurp(w / "pretrain/checkpoint.ssbc"));

  CHECK(run(temp_dir("pretrain_empty"), {"pretrain", "--steps", "2"}).code == 3);
}

TEST_CASE("finetune from random and pretrained init, then eval") {
  const auto w = temp_dir("finetune");
  const std::vector<std::string> split{"--set", "synth.train_fraction=0.5", "--set",
                                       "synth.val_fraction=0.25", "--set", "synth.test_fraction=0.25"};
  auto with = [&](std::vector<std::string> rest) {
    auto a = split;
    a.insert(a.end(), rest.begin(), rest.end());
    return a;
  };
  REQUIRE(run(w, with({"dataset-synth", "--rooms", "8", "--clips-per-room", "1", "--unlabeled-clips", "2"})).code == 0);
  REQUIRE(run(w, with({"pretrain", "--steps", "2"})).code == 0);
  for (std::string init : {"random", "pretrained"}) {
    const auto r = run(w, with({"finetune", "--init", init, "--max-epochs", "2"}));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(csv_rows(w / ("finetune/volume-" + init + "/history.csv")).size() == 2);
  }
  const auto r = run(w, with({"eval", "--checkpoint", "finetune/volume-pretrained/checkpoint.ssbc"}));
  CHECK_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("SS-BRPE w/ Feature AUG") != std::string::npos);
  CHECK(fs::exists(w / "finetune/volume-pretrained/metrics_test.json"));
  CHECK(csv_rows(w / "finetune/volume-pretrained/predictions_test.csv").size() == 2);

  const auto bad = run(w, with({"--set", "features.hop_s=0.02", "eval", "--checkpoint",
                                "finetune/volume-pretrained/checkpoint.ssbc"}));
  CHECK(bad.code == 2);
  CHECK(bad.err.find("checkpoint") != std::string::npos);
  CHECK(bad.err.find("extractor") != std::string::npos);
}

TEST_CASE("eval on perfect predictions") {
  const auto w = temp_dir("eval");
  std::ofstream(w / "p.csv") << "pred,true\n10,10\n100,100\n1000,1000\n";
  const auto r = run(w, {"eval", "--predictions", "p.csv"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto doc = nlohmann::json::parse(slurp(w / "metrics_test.json"));
  CHECK(doc["metrics"]["log_mse"] == 0.0);
  CHECK(doc["metrics"]["log_mae"] == 0.0);
  CHECK(doc["metrics"]["pearson_rho"].get<double>() == doctest::Approx(1.0));
  CHECK(doc["metrics"]["mean_mult"] == 1.0);
  CHECK(doc["metrics"]["linear_mae"] == 0.0);
  std::ofstream(w / "neg.csv") << "pred,true\n-1,10\n100,100\n";
  CHECK(run(w, {"eval", "--predictions", "neg.csv"}).code == 3);
}

TEST_CASE("predict with a constant head") {
  const auto w = temp_dir("predict");
  const auto c = cli::resolve_config({}, [] {
    nlohmann::json o;
    for (std::size_t i = 1; i < kSmall.size(); i += 2) o.merge_patch(cli::parse_assignment(kSmall[i]));
    return o;
  }());
  model::Model m(c.model, 1);
  m.heads().reg_w.value().fill(0.0f);
  m.heads().reg_b.value().fill(2.0f);
  model::save_checkpoint(w / "const.ssbc", model::make_checkpoint(m, c.features, {{"target", "volume"}}));
  std::vector<std::string> args{"predict", "--checkpoint", "const.ssbc"};
  for (int i = 0; i < 3; ++i) {
    audio::AudioClip clip;
    Rng rng = make_stream(i, 0);
    clip.samples = dataset::make_noise(dataset::NoiseKind::kWhite, 8000 + 4000 * i, rng);
    const auto p = w / ("in" + std::to_string(i) + ".wav");
    audio::write_wav(p, clip);
    args.push_back(p.string());
  }
  const auto r = run(w, args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out == "100\n100\n100\n");
}

TEST_CASE("exit codes") {
  const auto w = temp_dir("codes");
  CHECK(run(w, {"--set", "train.nope=1", "eval"}).code == 2);
  CHECK(run(w, {"--set", "train.patience=0", "eval"}).code == 2);
  CHECK(run(w, {"frobnicate"}).code == 2);
  CHECK(run(w, {"finetune", "--init", "imagenet"}).code == 2);
  CHECK(run(w, {"eval", "--checkpoint", "missing.ssbc"}).code == 3);
  CHECK(run(w, {"finetune"}).code == 3);
}

}  // TEST_SUITE

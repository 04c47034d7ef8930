// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/cli/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "ssbrpe/audio/audio.hpp"
#include "ssbrpe/dataset/dataset.hpp"
#include "ssbrpe/errors.hpp"
#include "ssbrpe/parallel.hpp"

namespace ssbrpe::cli {

using nlohmann::json;

void to_json(json& j, const SynthConfig& c) {
  j = json{{"rooms", c.rooms},
           {"clips_per_room", c.clips_per_room},
           {"keep_room_fraction", c.keep_room_fraction},
           {"train_fraction", c.train_fraction},
           {"val_fraction", c.val_fraction},
           {"test_fraction", c.test_fraction},
           {"snr_min_db", c.snr_min_db},
           {"snr_max_db", c.snr_max_db},
           {"unlabeled_clips", c.unlabeled_clips},
           {"speech_dir", c.speech_dir}};
}

void from_json(const json& j, SynthConfig& c) {
  c.rooms = j.value("rooms", c.rooms);
  c.clips_per_room = j.value("clips_per_room", c.clips_per_room);
  c.keep_room_fraction = j.value("keep_room_fraction", c.keep_room_fraction);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.snr_min_db = j.value("snr_min_db", c.snr_min_db);
  c.snr_max_db = j.value("snr_max_db", c.snr_max_db);
  c.unlabeled_clips = j.value("unlabeled_clips", c.unlabeled_clips);
  c.speech_dir = j.value("speech_dir", c.speech_dir);
}

// ---- configuration -------------------------------------------------------------

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  features.validate();
  model.validate();
  pretrain.validate();
  train.validate();
  augment.validate();
  if (synth.rooms < 1) throw ConfigError("synth.rooms must be >= 1");
  if (synth.clips_per_room < 1) throw ConfigError("synth.clips_per_room must be >= 1");
  if (synth.unlabeled_clips < 0) throw ConfigError("synth.unlabeled_clips must be >= 0");
  if (!(synth.snr_min_db <= synth.snr_max_db)) throw ConfigError("synth SNR range must be ordered");
  dataset::SplitSpec s{synth.train_fraction, synth.val_fraction, synth.test_fraction,
                       synth.keep_room_fraction, seed};
  s.validate();
}

json to_json(const RunConfig& c, bool portable) {
  json j;
  j["seed"] = c.seed;
  if (!portable) {
    j["threads"] = c.threads;
    j["deterministic"] = c.deterministic;
    j["workdir"] = c.workdir.string();
  }
  j["features"] = c.features;
  j["model"] = c.model;
  j["pretrain"] = c.pretrain;
  j["train"] = c.train;
  j["augment"] = c.augment;
  j["sampling"] = c.sampling;
  j["synth"] = c.synth;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.workdir = j.value("workdir", c.workdir.string());
  if (j.contains("features")) c.features = j["features"].get<features::FeatureConfig>();
  if (j.contains("model")) c.model = j["model"].get<model::ModelConfig>();
  if (j.contains("pretrain")) c.pretrain = j["pretrain"].get<pretrain::PretrainConfig>();
  if (j.contains("train")) c.train = j["train"].get<finetune::TrainConfig>();
  if (j.contains("augment")) c.augment = j["augment"].get<finetune::AugmentConfig>();
  if (j.contains("sampling")) c.sampling = j["sampling"].get<rir::RoomSamplingConfig>();
  if (j.contains("synth")) c.synth = j["synth"].get<SynthConfig>();
  return c;
}

json default_config_json() {
  RunConfig c;
  c.model = model::ModelConfig::desk();
  c.model.max_patches = 512;
  return to_json(c);
}

namespace {

void check_known_keys(const json& layer, const json& defaults, const std::string& where) {
  if (!layer.is_object()) return;
  for (auto it = layer.begin(); it != layer.end(); ++it) {
    const std::string path = where + "/" + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key " + path);
    if (defaults[it.key()].is_object()) check_known_keys(it.value(), defaults[it.key()], path);
  }
}

}  // namespace

RunConfig resolve_config(const std::vector<fs::path>& files, const json& overrides) {
  const json defaults = default_config_json();
  json merged = defaults;
  try {
    for (const auto& f : files) {
      std::ifstream in(f);
      if (!in) throw ConfigError("cannot read config file " + f.string());
      json layer;
      try {
        layer = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError("config file " + f.string() + ": " + e.what());
      }
      if (!layer.is_object()) throw ConfigError("config file " + f.string() + " must hold an object");
      check_known_keys(layer, defaults, "");
      merged.merge_patch(layer);
    }
    check_known_keys(overrides, defaults, "");
    merged.merge_patch(overrides);
    RunConfig c = run_config_from_json(merged);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

json parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + text + "'");
  const std::string key = text.substr(0, eq), raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  std::string pointer;
  std::istringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("empty component in key '" + key + "'");
    pointer += "/" + part;
  }
  json patch;
  patch[json::json_pointer(pointer)] = value;
  return patch;
}

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

fs::path under_workdir(const RunConfig& c, const fs::path& p, const fs::path& fallback) {
  if (p.empty()) return fallback;
  return p.is_absolute() ? p : c.workdir / p;
}

}  // namespace

void write_resolved_config(const fs::path& dir, const RunConfig& c) {
  ensure_dir(dir);
  write_text(dir / "config.resolved.json", to_json(c).dump(2) + "\n");
}

fs::path corpus_dir(const RunConfig& c) { return c.workdir / "corpus"; }
fs::path manifest_path(const RunConfig& c) { return corpus_dir(c) / "manifest.jsonl"; }
fs::path unlabeled_dir(const RunConfig& c) { return corpus_dir(c) / "unlabeled"; }
fs::path pretrain_dir(const RunConfig& c) { return c.workdir / "pretrain"; }
fs::path pretrain_checkpoint_path(const RunConfig& c) { return pretrain_dir(c) / "checkpoint.ssbc"; }
fs::path finetune_dir(const RunConfig& c, const std::string& init) {
  return c.workdir / "finetune" / (finetune::to_string(c.train.target) + "-" + init);
}

// ---- dataset-synth ---------------------------------------------------------------

std::vector<dataset::LabeledRoom> synthesize_rooms(const RunConfig& c) {
  std::vector<dataset::LabeledRoom> rooms(static_cast<std::size_t>(c.synth.rooms));
  parallel_for(rooms.size(), c.worker_threads(), [&](std::size_t i) {
    Rng rng = make_stream(c.seed, i, 0x726f6f6dull);
    const auto s = rir::sample_room(rng, c.sampling);
    rir::RirOptions opt;
    opt.sample_rate = audio::kTargetSampleRate;
    auto rec = rir::image_source_rir(s.room, s.source, s.receiver, opt);
    const auto rt = rir::estimate_rt60_with_fallback(rir::schroeder_edc(rec.samples, rec.sample_rate));
    rec.rt60_s = rt.seconds;
    rec.rt60_from_t20 = rt.used_t20;
    char id[32];
    std::snprintf(id, sizeof(id), "room%04zu", i);
    rec.room_id = id;
    rooms[i].rir = std::move(rec);
  });
  return rooms;
}

SynthResult cmd_dataset_synth(const RunConfig& c, std::ostream& log) {
  c.validate();
  const fs::path dir = corpus_dir(c);
  ensure_dir(dir);
  write_resolved_config(dir, c);

  log << "synthesizing " << c.synth.rooms << " rooms\n";
  const auto rooms = synthesize_rooms(c);
  const auto speech = c.synth.speech_dir.empty()
                          ? dataset::synthetic_speech_source()
                          : dataset::speech_source_from_dir(under_workdir(c, c.synth.speech_dir, {}));
  dataset::ClipConfig clip;
  clip.clip_seconds = c.features.clip_seconds;
  clip.snr_min_db = c.synth.snr_min_db;
  clip.snr_max_db = c.synth.snr_max_db;
  dataset::SplitSpec split{c.synth.train_fraction, c.synth.val_fraction, c.synth.test_fraction,
                           c.synth.keep_room_fraction, c.seed};

  SynthResult result;
  const auto entries =
      dataset::build_manifest(rooms, speech, c.synth.clips_per_room, clip, split, dir, c.worker_threads());
  result.manifest = manifest_path(c);
  dataset::write_manifest(result.manifest, entries);
  result.entries = entries.size();
  log << "wrote " << entries.size() << " clips to " << result.manifest.string() << "\n";

  if (c.synth.unlabeled_clips > 0) {
    std::vector<std::string> ids;
    for (const auto& r : rooms) ids.push_back(r.rir.room_id);
    const auto assignment = dataset::assign_splits(ids, split);
    std::vector<rir::RirRecord> train_rirs;
    for (const auto& r : rooms) {
      const auto it = assignment.find(r.rir.room_id);
      if (it != assignment.end() && it->second == dataset::Split::kTrain) train_rirs.push_back(r.rir);
    }
    const auto paths = dataset::build_unlabeled_corpus(
        train_rirs, speech, c.synth.unlabeled_clips, c.features.clip_seconds, clip, c.seed,
        unlabeled_dir(c), c.worker_threads());
    result.unlabeled = paths.size();
    log << "wrote " << paths.size() << " unlabeled clips to " << unlabeled_dir(c).string() << "\n";
  }
  return result;
}

// ---- pretrain --------------------------------------------------------------------

std::vector<features::PatchSet> load_pretrain_corpus(const fs::path& dir,
                                                     const features::FeatureConfig& config,
                                                     int threads,
                                                     features::FeatureNormalizer* normalizer) {
  std::vector<fs::path> wavs;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
  }
  if (ec) throw DataError("cannot list " + dir.string() + ": " + ec.message());
  if (wavs.empty()) throw DataError("no WAV files in " + dir.string());
  std::sort(wavs.begin(), wavs.end());

  std::vector<features::FeatureBlock> blocks(wavs.size());
  parallel_for(wavs.size(), threads, [&](std::size_t i) {
    auto clip = audio::read_wav_mono(wavs[i]);
    if (clip.sample_rate != config.sample_rate) {
      clip.samples = audio::resample(clip.samples, clip.sample_rate, config.sample_rate);
      clip.sample_rate = config.sample_rate;
    }
    blocks[i] = features::extract_features(clip, config);
  });
  const auto norm = features::FeatureNormalizer::fit(blocks);
  std::vector<features::PatchSet> out;
  out.reserve(blocks.size());
  for (auto& b : blocks) {
    norm.apply(b);
    out.push_back(features::patchify(b, features::PatchMode::kPretrain));
  }
  if (normalizer != nullptr) *normalizer = norm;
  return out;
}

namespace {

std::string trace_prefix_up_to(const fs::path& trace, std::size_t step) {
  std::ifstream in(trace);
  std::string out = pretrain::trace_header() + "\n";
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t s = std::stoull(line.substr(0, line.find(',')));
    if (s <= step) out += line + "\n";
  }
  return out;
}

}  // namespace

PretrainResult cmd_pretrain(const RunConfig& c, const PretrainOptions& opts, std::ostream& log) {
  c.validate();
  const fs::path data = under_workdir(c, opts.data_dir, unlabeled_dir(c));
  const fs::path out = under_workdir(c, opts.out_dir, pretrain_dir(c));
  ensure_dir(out);
  write_resolved_config(out, c);
  PretrainResult result;
  result.checkpoint = out / "checkpoint.ssbc";
  result.trace = out / "trace.csv";

  features::FeatureNormalizer norm;
  const auto corpus = load_pretrain_corpus(data, c.features, c.worker_threads(), &norm);
  log << "pretraining on " << corpus.size() << " clips\n";

  model::Model m(c.model, c.seed);
  nn::Adam opt(m.parameters(), pretrain::adam_config(c.pretrain));
  pretrain::LoopState state;
  std::string trace_text = pretrain::trace_header() + "\n";
  if (opts.resume) {
    const auto ckpt = model::load_checkpoint(result.checkpoint);
    model::check_feature_compat(ckpt, c.features);
    if (json(ckpt.model) != json(c.model)) {
      throw CompatibilityError("model config differs from the checkpoint being resumed");
    }
    model::load_parameters(m, ckpt);
    model::restore_optimizer(ckpt, m, opt);
    state.step = ckpt.meta.at("step").get<std::size_t>();
    trace_text = trace_prefix_up_to(result.trace, state.step);
    log << "resuming after step " << state.step << "\n";
  }
  result.first_step = state.step + 1;

  auto save = [&](std::size_t step, const nn::Adam& o) {
    json meta{{"purpose", "pretrain"}, {"seed", c.seed}, {"step", step}, {"config", to_json(c, true)}};
    auto ckpt = model::make_checkpoint(m, c.features, meta);
    model::store_optimizer(ckpt, m, o);
    model::store_normalizer(ckpt, norm);
    model::save_checkpoint(result.checkpoint, ckpt);
  };
  std::ofstream trace(result.trace, std::ios::binary | std::ios::trunc);
  if (!trace) throw IoError("cannot write " + result.trace.string());
  trace << trace_text;
  pretrain::LoopHooks hooks;
  hooks.on_step = [&](const pretrain::TraceRow& row) {
    trace << pretrain::trace_line(row) << "\n";
    trace.flush();
  };
  hooks.on_checkpoint = save;
  pretrain::pretrain_loop(corpus, m, opt, c.pretrain, c.seed, state, hooks);
  if (state.step < result.first_step) save(state.step, opt);
  result.last_step = state.step;
  log << "pretraining done at step " << state.step << "; checkpoint " << result.checkpoint.string()
      << "\n";
  return result;
}

// ---- finetune --------------------------------------------------------------------

namespace {

std::vector<finetune::Example> load_split(const std::vector<dataset::ManifestEntry>& all,
                                          dataset::Split split, const fs::path& root,
                                          const RunConfig& c, features::FeatureNormalizer& norm,
                                          bool fit) {
  const auto entries = dataset::filter_split(all, split);
  if (entries.empty()) return {};
  auto blocks = finetune::featurize(entries, root, c.features, c.worker_threads());
  if (fit) norm = features::FeatureNormalizer::fit(blocks);
  return finetune::make_examples(entries, std::move(blocks), norm, c.train.target);
}

}  // namespace

FinetuneResult cmd_finetune(const RunConfig& c, const FinetuneOptions& opts, std::ostream& log) {
  c.validate();
  if (opts.init != "random" && opts.init != "pretrained") {
    throw ConfigError("--init must be random or pretrained, got '" + opts.init + "'");
  }
  const fs::path manifest = under_workdir(c, opts.manifest, manifest_path(c));
  const fs::path out = under_workdir(c, opts.out_dir, finetune_dir(c, opts.init));
  ensure_dir(out);
  write_resolved_config(out, c);

  model::Model m(c.model, c.seed);
  if (opts.init == "pretrained") {
    const fs::path src = under_workdir(c, opts.pretrained, pretrain_checkpoint_path(c));
    const auto ckpt = model::load_checkpoint(src);
    model::check_feature_compat(ckpt, c.features);
    model::load_parameters(m, ckpt, model::LoadScope::kEncoderOnly);
    log << "encoder initialized from " << src.string() << "\n";
  }

  const auto all = dataset::read_manifest(manifest);
  const fs::path root = manifest.parent_path();
  features::FeatureNormalizer norm;
  const auto train = load_split(all, dataset::Split::kTrain, root, c, norm, true);
  const auto val = load_split(all, dataset::Split::kVal, root, c, norm, false);
  const auto test = load_split(all, dataset::Split::kTest, root, c, norm, false);
  if (train.empty()) throw DataError("manifest has no training clips");
  if (val.empty()) throw DataError("manifest has no validation clips");
  finetune::init_head_bias(m, train);
  log << "fine-tuning on " << train.size() << " clips, validating on " << val.size() << "\n";

  FinetuneResult result;
  result.history = out / "history.csv";
  result.checkpoint = out / "checkpoint.ssbc";
  std::ofstream history(result.history, std::ios::binary | std::ios::trunc);
  if (!history) throw IoError("cannot write " + result.history.string());
  history << finetune::history_header() << "\n";
  finetune::TrainHooks hooks;
  hooks.on_epoch = [&](const finetune::HistoryRow& row) {
    history << finetune::history_line(row) << "\n";
    history.flush();
  };
  result.train = finetune::train_with_early_stopping(m, train, val, c.train, c.augment, c.seed, hooks);
  result.test_mse = test.empty() ? std::numeric_limits<double>::quiet_NaN()
                                 : finetune::evaluate_mse(m, test);

  json meta{{"purpose", "finetune"},
            {"target", finetune::to_string(c.train.target)},
            {"init", opts.init},
            {"seed", c.seed},
            {"best_epoch", result.train.best_epoch},
            {"best_val_mse", result.train.best_val_mse},
            {"config", to_json(c, true)}};
  auto ckpt = model::make_checkpoint(m, c.features, meta);
  model::store_normalizer(ckpt, norm);
  model::save_checkpoint(result.checkpoint, ckpt);
  log << "best epoch " << result.train.best_epoch << ", val log-MSE " << result.train.best_val_mse;
  if (!test.empty()) log << ", test log-MSE " << result.test_mse;
  log << "\n";
  return result;
}

// ---- eval / predict --------------------------------------------------------------

namespace {

void read_prediction_csv(const fs::path& path, std::vector<double>& pred, std::vector<double>& truth) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (n == 1 && line.rfind("pred", 0) == 0)) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      pred.push_back(std::stod(line.substr(0, comma)));
      truth.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw DataError(path.string() + " line " + std::to_string(n) + ": expected pred,true");
    }
  }
}

std::string unit_for(finetune::Target t) { return t == finetune::Target::kVolume ? "m3" : "s"; }

}  // namespace

evalmetrics::MetricsReport cmd_eval(const RunConfig& c, const EvalOptions& opts, std::ostream& out) {
  c.validate();
  std::vector<double> pred, truth;
  finetune::Target target = c.train.target;
  fs::path out_dir = under_workdir(c, opts.out_dir, c.workdir);
  if (!opts.predictions.empty()) {
    read_prediction_csv(under_workdir(c, opts.predictions, {}), pred, truth);
  } else {
    if (opts.checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --predictions");
    const fs::path ckpt_path = under_workdir(c, opts.checkpoint, {});
    if (opts.out_dir.empty()) out_dir = ckpt_path.parent_path();
    const auto ckpt = model::load_checkpoint(ckpt_path);
    model::check_feature_compat(ckpt, c.features);
    if (ckpt.meta.contains("target")) target = finetune::parse_target(ckpt.meta["target"].get<std::string>());
    const auto m = model::model_from_checkpoint(ckpt);
    const auto norm = model::restore_normalizer(ckpt);
    const fs::path manifest = under_workdir(c, opts.manifest, manifest_path(c));
    const auto entries = dataset::filter_split(dataset::read_manifest(manifest),
                                               dataset::parse_split(opts.split));
    if (entries.empty()) throw DataError("split '" + opts.split + "' is empty");
    auto blocks = finetune::featurize(entries, manifest.parent_path(), c.features, c.worker_threads());
    const auto examples = finetune::make_examples(entries, std::move(blocks), norm, target);
    for (double p : finetune::predict_log10(m, examples)) pred.push_back(finetune::inverse_transform(p));
    for (const auto& e : entries) truth.push_back(finetune::label_of(e, target));
    ensure_dir(out_dir);
    std::string csv = "pred,true\n";
    char buf[64];
    for (std::size_t i = 0; i < pred.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", pred[i], truth[i]);
      csv += buf;
    }
    write_text(out_dir / ("predictions_" + opts.split + ".csv"), csv);
  }

  const auto report = evalmetrics::evaluate(pred, truth);
  const std::string protocol = c.synth.keep_room_fraction < 1.0 ? "limited_data" : "full_data";
  out << evalmetrics::format_report(report, unit_for(target)) << "\n"
      << evalmetrics::compare_to_reference(report, evalmetrics::reference_table(),
                                           finetune::to_string(target), protocol);
  ensure_dir(out_dir);
  json doc{{"target", finetune::to_string(target)},
           {"split", opts.split},
           {"metrics", report},
           {"config", to_json(c, true)}};
  write_text(out_dir / ("metrics_" + opts.split + ".json"), doc.dump(2) + "\n");
  write_resolved_config(out_dir, c);
  return report;
}

std::vector<double> cmd_predict(const RunConfig& c, const fs::path& checkpoint,
                                const std::vector<fs::path>& wavs, std::ostream& out) {
  if (wavs.empty()) throw ConfigError("predict needs at least one WAV file");
  const auto ckpt = model::load_checkpoint(under_workdir(c, checkpoint, {}));
  const finetune::Predictor predictor(ckpt, c.features);
  std::vector<double> values;
  char buf[64];
  for (const auto& w : wavs) {
    auto clip = audio::read_wav_mono(w);
    if (clip.sample_rate != c.features.sample_rate) {
      clip.samples = audio::resample(clip.samples, clip.sample_rate, c.features.sample_rate);
      clip.sample_rate = c.features.sample_rate;
    }
    values.push_back(predictor.predict(clip));
    std::snprintf(buf, sizeof(buf), "%.6g\n", values.back());
    out << buf;
  }
  return values;
}

// ---- argument parsing ------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind room volume and RT60 estimation with self-supervised pretraining", "ssbrpe"};
  app.require_subcommand(1);
  std::string workdir = ".";
  std::vector<std::string> config_files, sets;
  std::uint64_t seed = 0;
  int threads = 1;
  bool deterministic = false;
  auto* o_workdir = app.add_option("--workdir", workdir, "Directory for every output");
  app.add_option("--config", config_files, "JSON config layer (repeatable, later wins)");
  auto* o_seed = app.add_option("--seed", seed, "Global seed");
  auto* o_threads = app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  auto* o_det = app.add_flag("--deterministic", deterministic, "Single-threaded numeric paths");
  app.add_option("--set", sets, "Override one key, e.g. --set train.lr=3e-4 (repeatable)");

  auto* synth = app.add_subcommand("dataset-synth", "Render a labeled (and optional unlabeled) corpus");
  int rooms = 0, clips = 0, unlabeled = 0;
  double keep = 1.0;
  auto* o_rooms = synth->add_option("--rooms", rooms)->check(CLI::PositiveNumber);
  auto* o_clips = synth->add_option("--clips-per-room", clips)->check(CLI::PositiveNumber);
  auto* o_keep = synth->add_option("--keep-room-fraction", keep)->check(CLI::Range(0.0, 1.0));
  auto* o_unlab = synth->add_option("--unlabeled-clips", unlabeled)->check(CLI::NonNegativeNumber);

  auto* pre = app.add_subcommand("pretrain", "Masked patch pretraining on unlabeled clips");
  std::size_t steps = 0;
  double lambda = 0.0;
  PretrainOptions popts;
  auto* o_steps = pre->add_option("--steps", steps);
  auto* o_lambda = pre->add_option("--lambda", lambda);
  pre->add_flag("--resume", popts.resume, "Continue from the checkpoint in the output directory");
  pre->add_option("--data", popts.data_dir, "Directory of unlabeled WAV clips");
  pre->add_option("--out", popts.out_dir);

  auto* ft = app.add_subcommand("finetune", "Supervised fine-tuning with early stopping");
  FinetuneOptions fopts;
  std::string target;
  bool no_augment = false;
  std::size_t max_epochs = 0;
  ft->add_option("--init", fopts.init)->check(CLI::IsMember({"random", "pretrained"}));
  auto* o_target = ft->add_option("--target", target)->check(CLI::IsMember({"volume", "rt60"}));
  auto* o_noaug = ft->add_flag("--no-augment", no_augment);
  auto* o_epochs = ft->add_option("--max-epochs", max_epochs);
  ft->add_option("--manifest", fopts.manifest);
  ft->add_option("--pretrained", fopts.pretrained, "Pretraining checkpoint");
  ft->add_option("--out", fopts.out_dir);

  auto* ev = app.add_subcommand("eval", "Metrics report and reference comparison");
  EvalOptions eopts;
  ev->add_option("--checkpoint", eopts.checkpoint);
  ev->add_option("--manifest", eopts.manifest);
  ev->add_option("--predictions", eopts.predictions, "CSV of pred,true pairs");
  ev->add_option("--split", eopts.split)->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", eopts.out_dir);

  auto* pr = app.add_subcommand("predict", "One linear-scale estimate per WAV");
  std::string predict_ckpt;
  std::vector<std::string> wavs;
  pr->add_option("--checkpoint", predict_ckpt)->required();
  pr->add_option("wavs", wavs)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    const int code = app.exit(e, out, msg);
    err << msg.str();
    return code == 0 ? 0 : 2;
  }

  try {
    json overrides = json::object();
    for (const auto& s : sets) overrides.merge_patch(parse_assignment(s));
    if (o_workdir->count()) overrides["workdir"] = workdir;
    if (o_seed->count()) overrides["seed"] = seed;
    if (o_threads->count()) overrides["threads"] = threads;
    if (o_det->count()) overrides["deterministic"] = deterministic;
    if (o_rooms->count()) overrides["synth"]["rooms"] = rooms;
    if (o_clips->count()) overrides["synth"]["clips_per_room"] = clips;
    if (o_keep->count()) overrides["synth"]["keep_room_fraction"] = keep;
    if (o_unlab->count()) overrides["synth"]["unlabeled_clips"] = unlabeled;
    if (o_steps->count()) overrides["pretrain"]["steps"] = steps;
    if (o_lambda->count()) overrides["pretrain"]["lambda"] = lambda;
    if (o_target->count()) overrides["train"]["target"] = target;
    if (o_noaug->count()) overrides["train"]["augment"] = false;
    if (o_epochs->count()) overrides["train"]["max_epochs"] = max_epochs;
    std::vector<fs::path> files(config_files.begin(), config_files.end());
    const RunConfig c = resolve_config(files, overrides);

    if (*synth) {
      cmd_dataset_synth(c, out);
    } else if (*pre) {
      cmd_pretrain(c, popts, out);
    } else if (*ft) {
      cmd_finetune(c, fopts, out);
    } else if (*ev) {
      cmd_eval(c, eopts, out);
    } else if (*pr) {
      std::vector<fs::path> paths(wavs.begin(), wavs.end());
      cmd_predict(c, predict_ckpt, paths, out);
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ssbrpe::cli

// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/dataset/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"
#include "ssbrpe/errors.hpp"
#include "ssbrpe/parallel.hpp"

namespace ssbrpe::dataset {

namespace fs = std::filesystem;
using audio::kTargetSampleRate;

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

std::string to_string(SourceKind k) {
  return k == SourceKind::kSyntheticRir ? "synthetic_rir" : "external_rir";
}

std::string to_string(NoiseKind k) { return k == NoiseKind::kWhite ? "white" : "pink"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

SourceKind parse_source_kind(const std::string& s) {
  if (s == "synthetic_rir") return SourceKind::kSyntheticRir;
  if (s == "external_rir") return SourceKind::kExternalRir;
  throw DataError("unknown source_kind '" + s + "'");
}

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "white") return NoiseKind::kWhite;
  if (s == "pink") return NoiseKind::kPink;
  throw ConfigError("unknown noise kind '" + s + "'");
}

void SplitSpec::validate() const {
  for (double f : {train_fraction, val_fraction, test_fraction}) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
  }
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  if (!(room_type_keep_fraction > 0.0 && room_type_keep_fraction <= 1.0)) {
    throw ConfigError("room_type_keep_fraction must lie in (0, 1]");
  }
}

std::map<std::string, Split> assign_splits(const std::vector<std::string>& room_ids,
                                           const SplitSpec& spec) {
  spec.validate();
  const std::set<std::string> unique(room_ids.begin(), room_ids.end());
  if (unique.size() != room_ids.size()) throw DataError("duplicate room ids");
  const double fractions[3] = {spec.train_fraction, spec.val_fraction, spec.test_fraction};
  const int active = static_cast<int>(std::count_if(std::begin(fractions), std::end(fractions),
                                                    [](double f) { return f > 0.0; }));
  const std::size_t n = room_ids.size();
  if (n < static_cast<std::size_t>(active)) {
    throw DataError("need at least " + std::to_string(active) + " rooms to fill every split, got " +
                    std::to_string(n));
  }

  std::vector<std::string> order(unique.begin(), unique.end());
  Rng rng = make_stream(spec.seed, 0, 0x5b117);
  std::shuffle(order.begin(), order.end(), rng);

  std::size_t counts[3];
  for (int s = 0; s < 3; ++s) {
    counts[s] = static_cast<std::size_t>(std::llround(fractions[s] * static_cast<double>(n)));
    if (fractions[s] > 0.0) counts[s] = std::max<std::size_t>(counts[s], 1);
  }
  // Absorb rounding into the largest split.
  const int largest = static_cast<int>(std::max_element(std::begin(fractions), std::end(fractions)) -
                                       std::begin(fractions));
  std::size_t others = 0;
  for (int s = 0; s < 3; ++s) {
    if (s != largest) others += counts[s];
  }
  counts[largest] = n - others;

  std::map<std::string, Split> out;
  std::vector<std::string> train_rooms;
  std::size_t pos = 0;
  for (int s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < counts[s]; ++k, ++pos) {
      if (s == 0) {
        train_rooms.push_back(order[pos]);
      } else {
        out[order[pos]] = static_cast<Split>(s);
      }
    }
  }
  std::size_t keep = train_rooms.size();
  if (spec.room_type_keep_fraction < 1.0 && !train_rooms.empty()) {
    keep = static_cast<std::size_t>(
        std::llround(spec.room_type_keep_fraction * static_cast<double>(train_rooms.size())));
    keep = std::clamp<std::size_t>(keep, 1, train_rooms.size());
    Rng keep_rng = make_stream(spec.seed, 1, 0x5b117);
    std::shuffle(train_rooms.begin(), train_rooms.end(), keep_rng);
  }
  for (std::size_t k = 0; k < keep; ++k) out[train_rooms[k]] = Split::kTrain;
  return out;
}

AudioClip convolve_speech_rir(const AudioClip& speech, const rir::RirRecord& rir) {
  if (speech.sample_rate != rir.sample_rate) {
    throw DataError("sample-rate mismatch: speech " + std::to_string(speech.sample_rate) +
                    " Hz vs impulse response " + std::to_string(rir.sample_rate) + " Hz");
  }
  const auto wet = audio::fft_convolve(speech.samples, rir.samples);
  double peak = 0.0;
  for (double v : wet) peak = std::max(peak, std::abs(v));
  AudioClip out;
  out.sample_rate = speech.sample_rate;
  out.samples.resize(wet.size());
  const double g = peak > 0.0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < wet.size(); ++i) out.samples[i] = static_cast<float>(wet[i] * g);
  return out;
}

std::vector<float> make_noise(NoiseKind kind, std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> out(n);
  if (kind == NoiseKind::kWhite) {
    for (float& v : out) v = static_cast<float>(normal(rng));
    return out;
  }
  // Paul Kellet's refined pink filter on white Gaussian input.
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (float& v : out) {
    const double w = normal(rng);
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    v = static_cast<float>(b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362);
    b6 = w * 0.115926;
  }
  return out;
}

AudioClip add_noise(const AudioClip& clip, NoiseKind kind, double snr_db, Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0) return clip;
  if (!std::isfinite(snr_db)) throw DomainError("snr_db must be finite or +inf");
  const double p_signal = audio::mean_power(clip.samples);
  if (!(p_signal > 0.0)) throw DataError("cannot set SNR on a zero-power clip");
  const auto noise = make_noise(kind, clip.samples.size(), rng);
  const double p_noise = audio::mean_power(noise);
  const double gain = std::sqrt(p_signal / (p_noise * std::pow(10.0, snr_db / 10.0)));
  AudioClip out = clip;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i] = static_cast<float>(static_cast<double>(clip.samples[i]) + gain * noise[i]);
  }
  return out;
}

AudioClip standardize_pretrain_clip(const audio::MultiChannelAudio& clip, double seconds) {
  if (clip.frames() == 0) throw DataError("cannot standardize an empty clip");
  AudioClip mono = audio::mixdown(clip);
  if (mono.sample_rate != kTargetSampleRate) {
    mono.samples = audio::resample(mono.samples, mono.sample_rate, kTargetSampleRate);
    mono.sample_rate = kTargetSampleRate;
  }
  mono.samples.resize(static_cast<std::size_t>(std::llround(seconds * kTargetSampleRate)), 0.0f);
  return mono;
}

namespace {

struct Biquad {
  double b0 = 0, b2 = 0, a1 = 0, a2 = 0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  void set_bandpass(double f0, double bandwidth, double fs) {
    const double w0 = 2.0 * std::numbers::pi * f0 / fs;
    const double alpha = std::sin(w0) * bandwidth / (2.0 * f0);
    const double a0 = 1.0 + alpha;
    b0 = alpha / a0;
    b2 = -alpha / a0;
    a1 = -2.0 * std::cos(w0) / a0;
    a2 = (1.0 - alpha) / a0;
  }
  double process(double x) {
    const double y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

AudioClip synthesize_speech(Rng& rng, double seconds, int sample_rate) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double fs = sample_rate;
  const std::size_t total = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<double> y(total, 0.0);
  const double base_f0 = 90.0 + 130.0 * u(rng);
  Biquad f1, f2, f3;
  double phase = 0.0;
  std::size_t pos = static_cast<std::size_t>(u(rng) * 0.1 * fs);
  while (pos < total) {
    if (u(rng) < 0.25) pos += static_cast<std::size_t>((0.05 + 0.35 * u(rng)) * fs);
    const std::size_t len = static_cast<std::size_t>((0.12 + 0.18 * u(rng)) * fs);
    const bool voiced = u(rng) < 0.75;
    const double f0 = base_f0 * (0.85 + 0.3 * u(rng));
    const double f0_slope = (u(rng) - 0.5) * 0.4;
    f1.set_bandpass(300.0 + 600.0 * u(rng), 90.0, fs);
    f2.set_bandpass(900.0 + 1600.0 * u(rng), 120.0, fs);
    f3.set_bandpass(2300.0 + 900.0 * u(rng), 160.0, fs);
    const double level = 0.5 + 0.5 * u(rng);
    for (std::size_t k = 0; k < len && pos + k < total; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(len);
      double excitation;
      if (voiced) {
        phase += f0 * (1.0 + f0_slope * t) / fs;
        excitation = 0.0;
        if (phase >= 1.0) {
          phase -= 1.0;
          excitation = 1.0;
        }
        excitation += 0.02 * normal(rng);
      } else {
        excitation = 0.3 * normal(rng);
      }
      const double env = level * std::sin(std::numbers::pi * t);
      y[pos + k] = env * (f1.process(excitation) + 0.6 * f2.process(excitation) +
                          0.3 * f3.process(excitation));
    }
    pos += len;
  }
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  AudioClip out;
  out.sample_rate = sample_rate;
  out.samples.resize(total);
  const double g = peak > 0.0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < total; ++i) out.samples[i] = static_cast<float>(y[i] * g);
  return out;
}

SpeechSource synthetic_speech_source() {
  return [](Rng& rng, double seconds) { return synthesize_speech(rng, seconds); };
}

SpeechSource speech_source_from_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("speech directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && (e.path().extension() == ".wav" || e.path().extension() == ".WAV")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  auto clips = std::make_shared<std::vector<AudioClip>>();
  for (const auto& f : files) {
    AudioClip c = audio::read_wav_mono(f);
    if (c.samples.empty()) continue;
    if (c.sample_rate != kTargetSampleRate) {
      c.samples = audio::resample(c.samples, c.sample_rate, kTargetSampleRate);
      c.sample_rate = kTargetSampleRate;
    }
    clips->push_back(std::move(c));
  }
  if (clips->empty()) throw DataError("no usable WAV files under " + dir.string());
  return [clips](Rng& rng, double seconds) {
    const AudioClip& src = (*clips)[std::uniform_int_distribution<std::size_t>(
        0, clips->size() - 1)(rng)];
    const std::size_t n = static_cast<std::size_t>(std::llround(seconds * kTargetSampleRate));
    const std::size_t start =
        std::uniform_int_distribution<std::size_t>(0, src.samples.size() - 1)(rng);
    AudioClip out;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.samples[i] = src.samples[(start + i) % src.samples.size()];
    }
    return out;
  };
}

std::size_t direct_sound_onset(const std::vector<float>& rir) {
  const float peak = audio::peak_abs(rir);
  for (std::size_t i = 0; i < rir.size(); ++i) {
    if (std::abs(rir[i]) >= 0.1f * peak) return i;
  }
  return 0;
}

namespace {

AudioClip limit_peak(AudioClip clip) {
  const float peak = audio::peak_abs(clip.samples);
  if (peak > 1.0f) {
    for (float& v : clip.samples) v /= peak;
  }
  return clip;
}

NoiseKind draw_noise_kind(const ClipConfig& cfg, Rng& rng) {
  if (cfg.noise_kinds.empty()) throw ConfigError("no noise kinds configured");
  return cfg.noise_kinds[std::uniform_int_distribution<std::size_t>(0, cfg.noise_kinds.size() - 1)(rng)];
}

}  // namespace

std::vector<ManifestEntry> build_manifest(const std::vector<LabeledRoom>& rooms,
                                          const SpeechSource& speech, int per_room_clips,
                                          const ClipConfig& cfg, const SplitSpec& split,
                                          const fs::path& out_dir, int threads) {
  if (per_room_clips < 1) throw ConfigError("per_room_clips must be >= 1");
  if (!(cfg.snr_min_db <= cfg.snr_max_db)) throw ConfigError("SNR range must be ordered");
  std::vector<std::string> ids;
  for (const auto& r : rooms) ids.push_back(r.rir.room_id);
  const auto assignment = assign_splits(ids, split);

  struct Job {
    std::size_t room;
    int clip;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < rooms.size(); ++r) {
    if (!assignment.count(rooms[r].rir.room_id)) continue;
    for (int k = 0; k < per_room_clips; ++k) jobs.push_back({r, k});
  }
  const std::size_t crop_len = static_cast<std::size_t>(std::llround(cfg.clip_seconds * kTargetSampleRate));
  std::vector<ManifestEntry> entries(jobs.size());
  fs::create_directories(out_dir / "clips");

  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const LabeledRoom& room = rooms[jobs[j].room];
    Rng rng = make_stream(split.seed, jobs[j].room, 0x10000u + static_cast<unsigned>(jobs[j].clip));
    const double speech_seconds = cfg.clip_seconds + 1.0;
    const AudioClip dry = speech(rng, speech_seconds);
    const AudioClip wet = convolve_speech_rir(dry, room.rir);
    const std::size_t onset = direct_sound_onset(room.rir.samples);
    const std::size_t max_start = onset + dry.samples.size() - std::min(dry.samples.size(), crop_len);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(onset, max_start)(rng);
    AudioClip crop;
    crop.samples.assign(crop_len, 0.0f);
    for (std::size_t i = 0; i < crop_len && start + i < wet.samples.size(); ++i) {
      crop.samples[i] = wet.samples[start + i];
    }
    const double snr = std::uniform_real_distribution<double>(cfg.snr_min_db, cfg.snr_max_db)(rng);
    const NoiseKind kind = draw_noise_kind(cfg, rng);
    const AudioClip noisy = limit_peak(add_noise(crop, kind, snr, rng));

    ManifestEntry& e = entries[j];
    char name[64];
    std::snprintf(name, sizeof(name), "clips/%s_c%02d.wav", room.rir.room_id.c_str(), jobs[j].clip);
    e.clip_path = name;
    e.room_id = room.rir.room_id;
    e.volume_m3 = room.rir.volume_m3;
    e.rt60_s = room.rir.rt60_s;
    e.snr_db = snr;
    e.split = assignment.at(room.rir.room_id);
    e.source_kind = room.source_kind;
    audio::write_wav(out_dir / e.clip_path, noisy);
  });
  return entries;
}

std::vector<std::string> build_unlabeled_corpus(const std::vector<rir::RirRecord>& rirs,
                                                const SpeechSource& speech, int count,
                                                double seconds, const ClipConfig& cfg,
                                                std::uint64_t seed, const fs::path& out_dir,
                                                int threads) {
  if (count < 0) throw ConfigError("unlabeled clip count must be non-negative");
  std::vector<std::string> paths(static_cast<std::size_t>(count));
  fs::create_directories(out_dir);
  const std::size_t len = static_cast<std::size_t>(std::llround(seconds * kTargetSampleRate));
  parallel_for(paths.size(), threads, [&](std::size_t i) {
    Rng rng = make_stream(seed, i, 0x01abu);
    AudioClip clip = speech(rng, seconds);
    if (i % 2 == 1 && !rirs.empty()) {
      const auto& r = rirs[std::uniform_int_distribution<std::size_t>(0, rirs.size() - 1)(rng)];
      const AudioClip wet = convolve_speech_rir(clip, r);
      const std::size_t onset = direct_sound_onset(r.samples);
      for (std::size_t k = 0; k < len; ++k) {
        clip.samples[k] = onset + k < wet.samples.size() ? wet.samples[onset + k] : 0.0f;
      }
    }
    const double snr = std::uniform_real_distribution<double>(cfg.snr_min_db, cfg.snr_max_db)(rng);
    const NoiseKind kind = draw_noise_kind(cfg, rng);
    if (audio::mean_power(clip.samples) > 0.0) clip = add_noise(clip, kind, snr, rng);
    audio::MultiChannelAudio raw{clip.samples, clip.sample_rate, 1};
    clip = limit_peak(standardize_pretrain_clip(raw, seconds));
    char name[32];
    std::snprintf(name, sizeof(name), "u_%05zu.wav", i);
    paths[i] = name;
    audio::write_wav(out_dir / name, clip);
  });
  return paths;
}

std::string manifest_line(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["clip_path"] = e.clip_path;
  j["room_id"] = e.room_id;
  j["volume_m3"] = e.volume_m3;
  j["rt60_s"] = e.rt60_s;
  if (std::isfinite(e.snr_db)) {
    j["snr_db"] = e.snr_db;
  } else {
    j["snr_db"] = nullptr;  // no-noise mode
  }
  j["split"] = to_string(e.split);
  j["source_kind"] = to_string(e.source_kind);
  return j.dump();
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& e : entries) os << manifest_line(e) << '\n';
  if (!os) throw IoError("failed writing manifest " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.clip_path = j.at("clip_path").get<std::string>();
      e.room_id = j.at("room_id").get<std::string>();
      e.volume_m3 = j.at("volume_m3").get<double>();
      e.rt60_s = j.at("rt60_s").get<double>();
      e.snr_db = j.at("snr_db").is_null() ? kNoNoise : j.at("snr_db").get<double>();
      e.split = parse_split(j.at("split").get<std::string>());
      e.source_kind = parse_source_kind(j.at("source_kind").get<std::string>());
      if (!(e.volume_m3 > 0.0 && e.rt60_s > 0.0)) throw DataError("labels must be positive");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const DataError& ex) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, Split split) {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [split](const ManifestEntry& e) { return e.split == split; });
  return out;
}

}  // namespace ssbrpe::dataset

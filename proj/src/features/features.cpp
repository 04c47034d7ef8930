// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/features/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::features {

namespace {

constexpr double kLogFloor = 1e-10;
constexpr std::uint32_t kBlockVersion = 1;
// Largest float not above pi; float(pi) itself rounds up.
const float kPiFloat = std::nextafter(static_cast<float>(std::numbers::pi), 0.0f);

std::size_t to_samples(double seconds, int rate, const char* what) {
  const double n = seconds * rate;
  const double r = std::round(n);
  if (!(r >= 1.0) || std::abs(n - r) > 1e-6) {
    throw ConfigError(std::string(what) + " must be a positive whole number of samples");
  }
  return static_cast<std::size_t>(r);
}

double erb_bandwidth(double hz) { return 24.7 * (4.37 * hz / 1000.0 + 1.0); }

}  // namespace

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (n_gammatone < 2) throw ConfigError("need at least 2 gammatone channels");
  if (!(fmin_hz > 0.0 && fmin_hz < fmax_hz && fmax_hz <= sample_rate / 2.0)) {
    throw ConfigError("gammatone range must satisfy 0 < fmin < fmax <= fs/2");
  }
  to_samples(frame_len_s, sample_rate, "frame_len_s");
  to_samples(hop_s, sample_rate, "hop_s");
  if (phase_nfft < 2) throw ConfigError("phase_nfft must be >= 2");
  if (!(phase_max_hz >= 0.0 && phase_max_hz <= sample_rate / 2.0)) {
    throw ConfigError("phase_max_hz must lie in [0, fs/2]");
  }
  if (clip_seconds < 0.0) throw ConfigError("clip_seconds must be non-negative");
}

std::size_t FeatureConfig::frame_len_samples() const {
  return to_samples(frame_len_s, sample_rate, "frame_len_s");
}

std::size_t FeatureConfig::hop_samples() const { return to_samples(hop_s, sample_rate, "hop_s"); }

int FeatureConfig::n_phase_rows() const {
  const double bin_hz = static_cast<double>(sample_rate) / phase_nfft;
  return static_cast<int>(std::floor(phase_max_hz / bin_hz + 1e-9)) + 1;
}

std::size_t FeatureConfig::frames_for(std::size_t n_samples) const {
  const std::size_t frame = frame_len_samples();
  if (n_samples < frame) {
    throw DataError("clip of " + std::to_string(n_samples) + " samples is shorter than one " +
                    std::to_string(frame) + "-sample frame");
  }
  return (n_samples - frame) / hop_samples() + 1;
}

std::string FeatureConfig::fingerprint() const {
  nlohmann::json j = *this;
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = nlohmann::json{{"sample_rate", c.sample_rate}, {"n_gammatone", c.n_gammatone},
                     {"fmin_hz", c.fmin_hz},         {"fmax_hz", c.fmax_hz},
                     {"frame_len_s", c.frame_len_s}, {"hop_s", c.hop_s},
                     {"phase_nfft", c.phase_nfft},   {"phase_max_hz", c.phase_max_hz},
                     {"clip_seconds", c.clip_seconds}};
}

void from_json(const nlohmann::json& j, FeatureConfig& c) {
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.n_gammatone = j.value("n_gammatone", c.n_gammatone);
  c.fmin_hz = j.value("fmin_hz", c.fmin_hz);
  c.fmax_hz = j.value("fmax_hz", c.fmax_hz);
  c.frame_len_s = j.value("frame_len_s", c.frame_len_s);
  c.hop_s = j.value("hop_s", c.hop_s);
  c.phase_nfft = j.value("phase_nfft", c.phase_nfft);
  c.phase_max_hz = j.value("phase_max_hz", c.phase_max_hz);
  c.clip_seconds = j.value("clip_seconds", c.clip_seconds);
}

double erb_rate(double hz) { return 21.4 * std::log10(0.00437 * hz + 1.0); }

double erb_rate_to_hz(double erbs) { return (std::pow(10.0, erbs / 21.4) - 1.0) / 0.00437; }

std::vector<double> erb_center_frequencies(int n, double fmin_hz, double fmax_hz,
                                           int sample_rate) {
  if (n < 2) throw DomainError("need at least 2 centre frequencies");
  if (!(fmin_hz > 0.0 && fmin_hz < fmax_hz && fmax_hz <= sample_rate / 2.0)) {
    throw DomainError("centre frequency range must satisfy 0 < fmin < fmax <= fs/2");
  }
  const double lo = erb_rate(fmin_hz), hi = erb_rate(fmax_hz);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = erb_rate_to_hz(lo + (hi - lo) * i / (n - 1));
  }
  out.front() = fmin_hz;
  out.back() = fmax_hz;
  return out;
}

nn::Array gammatone_spectrogram(const audio::AudioClip& clip, const FeatureConfig& config) {
  config.validate();
  if (clip.sample_rate != config.sample_rate) {
    throw DataError("gammatone input must be sampled at " + std::to_string(config.sample_rate) +
                    " Hz");
  }
  const std::size_t n = clip.samples.size();
  const std::size_t frames = config.frames_for(n);
  const std::size_t frame = config.frame_len_samples(), hop = config.hop_samples();
  const auto cfs = erb_center_frequencies(config.n_gammatone, config.fmin_hz, config.fmax_hz,
                                          config.sample_rate);
  const double fs = config.sample_rate;
  nn::Array out({cfs.size(), frames});
  std::vector<double> energy(n);
  for (std::size_t ch = 0; ch < cfs.size(); ++ch) {
    // Four identical resonators with poles at r e^{+-j theta}, each
    // normalized to unit gain at the centre frequency.
    const double theta = 2.0 * std::numbers::pi * cfs[ch] / fs;
    const double r = std::exp(-2.0 * std::numbers::pi * 1.019 * erb_bandwidth(cfs[ch]) / fs);
    const double a1 = 2.0 * r * std::cos(theta), a2 = -r * r;
    const std::complex<double> z1 = std::polar(1.0, -theta);
    const double gain = std::abs(1.0 - a1 * z1 - a2 * z1 * z1);
    double s[4][2] = {};
    for (std::size_t i = 0; i < n; ++i) {
      double x = clip.samples[i];
      for (auto& st : s) {
        const double y = gain * x + a1 * st[0] + a2 * st[1];
        st[1] = st[0];
        st[0] = y;
        x = y;
      }
      energy[i] = x * x;
    }
    for (std::size_t t = 0; t < frames; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < frame; ++k) acc += energy[t * hop + k];
      out.at(ch, t) = static_cast<float>(std::log10(acc / static_cast<double>(frame) + kLogFloor));
    }
  }
  return out;
}

nn::Array lowfreq_phase_spectrogram(const audio::AudioClip& clip, const FeatureConfig& config) {
  config.validate();
  if (clip.sample_rate != config.sample_rate) {
    throw DataError("phase input must be sampled at " + std::to_string(config.sample_rate) + " Hz");
  }
  const std::size_t n = clip.samples.size();
  const std::size_t frames = config.frames_for(n);
  const std::size_t frame = config.frame_len_samples(), hop = config.hop_samples();
  const std::size_t nfft = static_cast<std::size_t>(config.phase_nfft);
  const std::size_t bins = static_cast<std::size_t>(config.n_phase_rows());
  std::vector<double> window(nfft);
  for (std::size_t i = 0; i < nfft; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / nfft);
  }
  audio::RealFft fft(nfft);
  std::vector<double> buf(nfft);
  nn::Array out({bins, frames});
  for (std::size_t t = 0; t < frames; ++t) {
    const auto centre = static_cast<std::ptrdiff_t>(t * hop + frame / 2);
    const std::ptrdiff_t start = centre - static_cast<std::ptrdiff_t>(nfft / 2);
    for (std::size_t i = 0; i < nfft; ++i) {
      const std::ptrdiff_t idx = start + static_cast<std::ptrdiff_t>(i);
      buf[i] = (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n))
                   ? window[i] * clip.samples[static_cast<std::size_t>(idx)]
                   : 0.0;
    }
    const auto& spec = fft.forward(buf);
    for (std::size_t b = 0; b < bins; ++b) {
      const double re = spec[b].real(), im = spec[b].imag();
      const float a = (re == 0.0 && im == 0.0) ? 0.0f : static_cast<float>(std::atan2(im, re));
      out.at(b, t) = std::clamp(a, -kPiFloat, kPiFloat);
    }
  }
  return out;
}

FeatureNormalizer FeatureNormalizer::fit(std::span<const FeatureBlock> blocks) {
  if (blocks.empty()) throw DataError("cannot fit feature statistics on an empty set");
  const int n_gamma = blocks.front().n_gamma;
  std::vector<double> sum(static_cast<std::size_t>(n_gamma), 0.0),
      sq(static_cast<std::size_t>(n_gamma), 0.0);
  double count = 0.0;
  for (const auto& b : blocks) {
    if (b.n_gamma != n_gamma) throw DataError("blocks disagree on gammatone row count");
    for (int r = 0; r < n_gamma; ++r) {
      for (std::size_t t = 0; t < b.frames(); ++t) {
        const double v = b.values.at(static_cast<std::size_t>(r), t);
        sum[static_cast<std::size_t>(r)] += v;
      }
    }
    count += static_cast<double>(b.frames());
  }
  FeatureNormalizer norm;
  norm.mean.resize(static_cast<std::size_t>(n_gamma));
  norm.stddev.resize(static_cast<std::size_t>(n_gamma));
  for (int r = 0; r < n_gamma; ++r) norm.mean[static_cast<std::size_t>(r)] =
      static_cast<float>(sum[static_cast<std::size_t>(r)] / count);
  // Second pass for a stable variance.
  for (const auto& b : blocks) {
    for (int r = 0; r < n_gamma; ++r) {
      const double mu = sum[static_cast<std::size_t>(r)] / count;
      for (std::size_t t = 0; t < b.frames(); ++t) {
        const double d = b.values.at(static_cast<std::size_t>(r), t) - mu;
        sq[static_cast<std::size_t>(r)] += d * d;
      }
    }
  }
  for (int r = 0; r < n_gamma; ++r) {
    norm.stddev[static_cast<std::size_t>(r)] =
        static_cast<float>(std::sqrt(sq[static_cast<std::size_t>(r)] / count));
  }
  return norm;
}

void FeatureNormalizer::apply(FeatureBlock& block) const {
  if (mean.size() != static_cast<std::size_t>(block.n_gamma) || stddev.size() != mean.size()) {
    throw CompatibilityError("normalizer has " + std::to_string(mean.size()) +
                             " rows, block has " + std::to_string(block.n_gamma) +
                             " gammatone rows");
  }
  for (std::size_t r = 0; r < mean.size(); ++r) {
    const double sd = std::max(static_cast<double>(stddev[r]), kStdFloor);
    for (std::size_t t = 0; t < block.frames(); ++t) {
      float& v = block.values.at(r, t);
      v = static_cast<float>((v - static_cast<double>(mean[r])) / sd);
    }
  }
}

FeatureBlock assemble_feature_block(const nn::Array& gamma, const nn::Array& phase,
                                    const FeatureConfig& config,
                                    const FeatureNormalizer* normalizer) {
  if (gamma.rank() != 2 || phase.rank() != 2) throw DimensionError("feature branches must be 2-D");
  if (gamma.shape()[1] != phase.shape()[1]) {
    throw DimensionError("frame count mismatch: gammatone " + std::to_string(gamma.shape()[1]) +
                         " vs phase " + std::to_string(phase.shape()[1]));
  }
  const std::size_t fg = gamma.shape()[0], fp = phase.shape()[0], t = gamma.shape()[1];
  FeatureBlock block;
  block.values = nn::Array({fg + fp, t});
  std::copy(gamma.vec().begin(), gamma.vec().end(), block.values.data());
  std::copy(phase.vec().begin(), phase.vec().end(), block.values.data() + fg * t);
  block.n_gamma = static_cast<int>(fg);
  block.n_phase = static_cast<int>(fp);
  block.frame_hop_s = config.hop_s;
  block.frame_len_s = config.frame_len_s;
  block.sample_rate = config.sample_rate;
  const auto cfs = erb_center_frequencies(static_cast<int>(fg) < 2 ? 2 : static_cast<int>(fg),
                                          config.fmin_hz, config.fmax_hz, config.sample_rate);
  for (std::size_t r = 0; r < fg; ++r) {
    block.row_map.push_back({RowDescriptor::Kind::kGammatone, static_cast<int>(r), cfs[r]});
  }
  const double bin_hz = static_cast<double>(config.sample_rate) / config.phase_nfft;
  for (std::size_t b = 0; b < fp; ++b) {
    block.row_map.push_back({RowDescriptor::Kind::kPhase, static_cast<int>(b), b * bin_hz});
  }
  if (normalizer != nullptr && !normalizer->empty()) normalizer->apply(block);
  return block;
}

FeatureBlock extract_features(const audio::AudioClip& clip, const FeatureConfig& config,
                              const FeatureNormalizer* normalizer) {
  config.validate();
  const audio::AudioClip* input = &clip;
  audio::AudioClip fitted;
  if (config.clip_seconds > 0.0) {
    fitted.sample_rate = clip.sample_rate;
    fitted.samples = clip.samples;
    fitted.samples.resize(
        static_cast<std::size_t>(std::llround(config.clip_seconds * clip.sample_rate)), 0.0f);
    input = &fitted;
  }
  return assemble_feature_block(gammatone_spectrogram(*input, config),
                                lowfreq_phase_spectrogram(*input, config), config, normalizer);
}

// ---- patches -------------------------------------------------------------------

std::size_t stride_for(PatchMode mode) { return mode == PatchMode::kPretrain ? 16 : 10; }

std::size_t covered_extent(std::size_t dim, std::size_t stride) {
  const std::size_t d = std::max(dim, kPatchSize);
  const std::size_t rem = (d - kPatchSize) % stride;
  return rem == 0 ? d : d + (stride - rem);
}

PatchGrid make_grid(std::size_t n_rows, std::size_t n_frames, PatchMode mode) {
  if (n_rows == 0 || n_frames == 0) throw DimensionError("cannot patchify an empty block");
  PatchGrid g;
  g.stride = stride_for(mode);
  const std::size_t f = covered_extent(n_rows, g.stride), t = covered_extent(n_frames, g.stride);
  g.pad_f = f - n_rows;
  g.pad_t = t - n_frames;
  g.rows = (f - kPatchSize) / g.stride + 1;
  g.cols = (t - kPatchSize) / g.stride + 1;
  return g;
}

PatchSet patchify(const nn::Array& values, PatchMode mode) {
  if (values.rank() != 2) throw DimensionError("patchify expects a 2-D block");
  const std::size_t f = values.shape()[0], t = values.shape()[1];
  PatchSet set;
  set.grid = make_grid(f, t, mode);
  const auto& g = set.grid;
  set.patches = nn::Array({g.count(), kPatchArea}, 0.0f);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      float* dst = set.patches.data() + (r * g.cols + c) * kPatchArea;
      for (std::size_t i = 0; i < kPatchSize; ++i) {
        const std::size_t fr = r * g.stride + i;
        if (fr >= f) break;
        for (std::size_t j = 0; j < kPatchSize; ++j) {
          const std::size_t tc = c * g.stride + j;
          if (tc < t) dst[i * kPatchSize + j] = values.at(fr, tc);
        }
      }
    }
  }
  return set;
}

nn::Array unpatchify(const PatchSet& set) {
  const auto& g = set.grid;
  if (g.stride != kPatchSize) {
    throw ContractError("unpatchify is defined for non-overlapping grids only");
  }
  nn::Array out({g.rows * kPatchSize, g.cols * kPatchSize});
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      const float* src = set.patches.data() + (r * g.cols + c) * kPatchArea;
      for (std::size_t i = 0; i < kPatchSize; ++i)
        for (std::size_t j = 0; j < kPatchSize; ++j)
          out.at(r * kPatchSize + i, c * kPatchSize + j) = src[i * kPatchSize + j];
    }
  }
  return out;
}

// ---- files ---------------------------------------------------------------------

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));  // host is little-endian
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated feature block file");
  return v;
}

}  // namespace

void write_feature_block(const std::filesystem::path& path, const FeatureBlock& block) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write feature block " + path.string());
  os.write("SSBF", 4);
  put<std::uint32_t>(os, kBlockVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(block.rows()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(block.frames()));
  put<double>(os, block.frame_hop_s);
  put<double>(os, block.frame_len_s);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(block.n_gamma));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(block.n_phase));
  os.write(reinterpret_cast<const char*>(block.values.data()),
           static_cast<std::streamsize>(block.values.size() * sizeof(float)));
  if (!os) throw IoError("failed writing feature block " + path.string());

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : block.row_map) {
    if (r.kind == RowDescriptor::Kind::kGammatone) {
      rows.push_back({{"kind", "gammatone"}, {"channel", r.index}, {"cf_hz", r.hz}});
    } else {
      rows.push_back({{"kind", "phase"}, {"bin", r.index}, {"hz", r.hz}});
    }
  }
  std::ofstream js(path.string() + ".json", std::ios::trunc);
  js << nlohmann::json{{"sample_rate", block.sample_rate}, {"row_map", rows}}.dump(1) << '\n';
}

FeatureBlock read_feature_block(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature block " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SSBF", 4) != 0) throw DataError("bad feature block magic");
  if (get<std::uint32_t>(is) != kBlockVersion) throw DataError("unsupported feature block version");
  FeatureBlock b;
  const auto f = get<std::uint32_t>(is), t = get<std::uint32_t>(is);
  b.frame_hop_s = get<double>(is);
  b.frame_len_s = get<double>(is);
  b.n_gamma = static_cast<int>(get<std::uint32_t>(is));
  b.n_phase = static_cast<int>(get<std::uint32_t>(is));
  if (static_cast<std::uint32_t>(b.n_gamma + b.n_phase) != f) {
    throw DataError("feature block row counts disagree");
  }
  b.values = nn::Array({f, t});
  is.read(reinterpret_cast<char*>(b.values.data()),
          static_cast<std::streamsize>(b.values.size() * sizeof(float)));
  if (!is) throw DataError("truncated feature block payload");

  std::ifstream js(path.string() + ".json");
  if (js) {
    const auto j = nlohmann::json::parse(js);
    b.sample_rate = j.value("sample_rate", 16000);
    for (const auto& r : j.at("row_map")) {
      if (r.at("kind") == "gammatone") {
        b.row_map.push_back({RowDescriptor::Kind::kGammatone, r.at("channel").get<int>(),
                             r.at("cf_hz").get<double>()});
      } else {
        b.row_map.push_back(
            {RowDescriptor::Kind::kPhase, r.at("bin").get<int>(), r.at("hz").get<double>()});
      }
    }
  }
  return b;
}

}  // namespace ssbrpe::features

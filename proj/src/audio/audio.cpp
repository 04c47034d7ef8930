// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/audio/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::audio {

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

MultiChannelAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("not a RIFF/WAVE file: " + path.string());
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      if (std::memcmp(chunk, "data", 4) == 0) {
        // Truncated stream: take what is there.
        data = bytes.data() + body;
        data_size = bytes.size() - body;
      }
      break;
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0 && size >= 16) {
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE && size >= 40) format = read_u16(chunk + 8 + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (channels == 0 || rate == 0 || data == nullptr) {
    throw DataError("WAV file lacks fmt or data chunk: " + path.string());
  }
  MultiChannelAudio out;
  out.sample_rate = static_cast<int>(rate);
  out.channels = channels;
  const std::size_t width = bits / 8;
  if (width == 0) throw DataError("unsupported WAV bit depth in " + path.string());
  const std::size_t n = data_size / width;
  out.interleaved.resize(n - n % channels);
  for (std::size_t i = 0; i < out.interleaved.size(); ++i) {
    const unsigned char* p = data + i * width;
    float v = 0.0f;
    if (format == 1 && bits == 16) {
      v = static_cast<float>(static_cast<std::int16_t>(read_u16(p))) / 32768.0f;
    } else if (format == 1 && bits == 24) {
      std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
      if (s & 0x800000) s |= ~0xFFFFFF;
      v = static_cast<float>(s) / 8388608.0f;
    } else if (format == 1 && bits == 32) {
      v = static_cast<float>(static_cast<double>(static_cast<std::int32_t>(read_u32(p))) /
                             2147483648.0);
    } else if (format == 3 && bits == 32) {
      const std::uint32_t u = read_u32(p);
      std::memcpy(&v, &u, 4);
    } else if (format == 3 && bits == 64) {
      std::uint64_t u = static_cast<std::uint64_t>(read_u32(p)) |
                        (static_cast<std::uint64_t>(read_u32(p + 4)) << 32);
      double d;
      std::memcpy(&d, &u, 8);
      v = static_cast<float>(d);
    } else {
      throw DataError("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits) in " + path.string());
    }
    out.interleaved[i] = v;
  }
  return out;
}

AudioClip mixdown(const MultiChannelAudio& audio) {
  AudioClip clip;
  clip.sample_rate = audio.sample_rate;
  const std::size_t frames = audio.frames();
  clip.samples.resize(frames);
  if (audio.channels == 1) {
    clip.samples = audio.interleaved;
    return clip;
  }
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (int c = 0; c < audio.channels; ++c) acc += audio.interleaved[f * audio.channels + c];
    clip.samples[f] = static_cast<float>(acc / audio.channels);
  }
  return clip;
}

AudioClip read_wav_mono(const std::filesystem::path& path) { return mixdown(read_wav(path)); }

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write WAV file " + path.string());
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 4);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put_u32(os, 16);
  put_u16(os, 3);  // IEEE float
  put_u16(os, 1);
  put_u32(os, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(os, static_cast<std::uint32_t>(clip.sample_rate) * 4);
  put_u16(os, 4);
  put_u16(os, 32);
  os.write("data", 4);
  put_u32(os, data_bytes);
  for (float v : clip.samples) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
  }
  if (!os) throw IoError("failed writing WAV file " + path.string());
}

double mean_power(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return acc / static_cast<double>(x.size());
}

float peak_abs(std::span<const float> x) {
  float p = 0.0f;
  for (float v : x) p = std::max(p, std::abs(v));
  return p;
}

struct RealFft::Plan {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;
};

RealFft::RealFft(std::size_t n) : n_(n), plan_(new Plan), bins_(n / 2 + 1) {
  if (n < 2) throw DomainError("FFT length must be >= 2");
  plan_->in = fftw_alloc_real(n);
  plan_->out = fftw_alloc_complex(n / 2 + 1);
  std::lock_guard lock(fftw_planner_mutex());
  plan_->plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), plan_->in, plan_->out, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_->plan);
  }
  fftw_free(plan_->in);
  fftw_free(plan_->out);
  delete plan_;
}

const std::vector<std::complex<double>>& RealFft::forward(std::span<const double> x) {
  std::fill(plan_->in, plan_->in + n_, 0.0);
  std::copy_n(x.begin(), std::min(n_, x.size()), plan_->in);
  fftw_execute(plan_->plan);
  for (std::size_t k = 0; k < bins_.size(); ++k) {
    bins_[k] = {plan_->out[k][0], plan_->out[k][1]};
  }
  return bins_;
}

std::vector<std::complex<double>> rfft(std::span<const double> x, std::size_t n) {
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  std::fill(in, in + n, 0.0);
  std::copy_n(x.begin(), std::min(n, x.size()), in);
  fftw_execute(plan);
  std::vector<std::complex<double>> result(n / 2 + 1);
  for (std::size_t k = 0; k < result.size(); ++k) result[k] = {out[k][0], out[k][1]};
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return result;
}

std::vector<double> fft_convolve(std::span<const float> a, std::span<const float> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(len);
  double* buf = fftw_alloc_real(n);
  fftw_complex* fa = fftw_alloc_complex(n / 2 + 1);
  fftw_complex* fb = fftw_alloc_complex(n / 2 + 1);
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), buf, fa, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), fa, buf, FFTW_ESTIMATE);
  }
  std::fill(buf, buf + n, 0.0);
  std::copy(a.begin(), a.end(), buf);
  fftw_execute_dft_r2c(fwd, buf, fa);
  std::fill(buf, buf + n, 0.0);
  std::copy(b.begin(), b.end(), buf);
  fftw_execute_dft_r2c(fwd, buf, fb);
  for (std::size_t k = 0; k < n / 2 + 1; ++k) {
    const double re = fa[k][0] * fb[k][0] - fa[k][1] * fb[k][1];
    const double im = fa[k][0] * fb[k][1] + fa[k][1] * fb[k][0];
    fa[k][0] = re;
    fa[k][1] = im;
  }
  fftw_execute_dft_c2r(inv, fa, buf);
  std::vector<double> out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = buf[i] / static_cast<double>(n);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(buf);
  fftw_free(fa);
  fftw_free(fb);
  return out;
}

std::vector<float> resample(std::span<const float> x, int from_rate, int to_rate, int half_width) {
  if (from_rate <= 0 || to_rate <= 0) throw DomainError("sample rates must be positive");
  if (from_rate == to_rate) return {x.begin(), x.end()};
  const double ratio = static_cast<double>(from_rate) / to_rate;
  const std::size_t n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.size()) * to_rate / from_rate));
  // Cutoff in cycles per input sample.
  const double fc = 0.5 * std::min(1.0, 1.0 / ratio);
  const double support = half_width / (2.0 * fc);
  std::vector<float> out(n_out);
  const auto n_in = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t m = 0; m < n_out; ++m) {
    const double t = static_cast<double>(m) * ratio;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - support)));
    const auto hi =
        std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(t + support)));
    double acc = 0.0;
    for (std::ptrdiff_t n = lo; n <= hi; ++n) {
      const double d = static_cast<double>(n) - t;
      const double arg = 2.0 * fc * d;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * d / support));
      acc += x[static_cast<std::size_t>(n)] * 2.0 * fc * sinc * w;
    }
    out[m] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace ssbrpe::audio

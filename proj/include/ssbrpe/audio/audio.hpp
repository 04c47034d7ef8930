// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace ssbrpe::audio {

inline constexpr int kTargetSampleRate = 16000;

// Mono signal.
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kTargetSampleRate;
};

// Interleaved multi-channel signal as read from disk.
struct MultiChannelAudio {
  std::vector<float> interleaved;
  int sample_rate = 0;
  int channels = 1;
  std::size_t frames() const { return channels > 0 ? interleaved.size() / channels : 0; }
};

// Reads RIFF/WAVE with PCM 16/24/32-bit integer or IEEE float32/64 samples.
MultiChannelAudio read_wav(const std::filesystem::path& path);
// Reads a WAV and mixes it down to mono by channel averaging.
AudioClip read_wav_mono(const std::filesystem::path& path);
// Writes mono IEEE float32 WAV.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

AudioClip mixdown(const MultiChannelAudio& audio);

double mean_power(std::span<const float> x);
float peak_abs(std::span<const float> x);

// Reusable real-input FFT plan of fixed length n. Not thread-safe per instance.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  // Input shorter than n is zero-padded. Returns n/2 + 1 bins.
  const std::vector<std::complex<double>>& forward(std::span<const double> x);

 private:
  struct Plan;
  std::size_t n_;
  Plan* plan_;
  std::vector<std::complex<double>> bins_;
};

// Real-input forward FFT of length `n` (zero-padded / truncated input).
// Returns n/2 + 1 bins.
std::vector<std::complex<double>> rfft(std::span<const double> x, std::size_t n);

// Full linear convolution, length a.size() + b.size() - 1, via FFT.
std::vector<double> fft_convolve(std::span<const float> a, std::span<const float> b);

// Band-limited windowed-sinc resampling (Hann-windowed, `half_width` zero
// crossings of the lower of the two Nyquist rates).
std::vector<float> resample(std::span<const float> x, int from_rate, int to_rate,
                            int half_width = 32);

}  // namespace ssbrpe::audio

// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssbrpe/rng.hpp"

namespace ssbrpe::rir {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
  double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
};

double distance(const Vec3& a, const Vec3& b);

// Axis-aligned rectangular room with its corner at the origin.
struct ShoeboxRoom {
  std::array<double, 3> dims{};  // Lx, Ly, Lz in metres
  // Absorption per wall: {x=0, x=Lx, y=0, y=Ly, z=0, z=Lz}.
  std::array<double, 6> absorption{};
  double speed_of_sound = 343.0;

  static ShoeboxRoom uniform(double lx, double ly, double lz, double alpha);

  double volume() const { return dims[0] * dims[1] * dims[2]; }
  double surface_area() const;
  // Area-weighted absorption, sum_i S_i * alpha_i.
  double absorption_area() const;
  bool contains(const Vec3& p) const;
  // Throws DomainError when a dimension or absorption is out of range.
  void validate() const;
};

struct RirRecord {
  std::vector<float> samples;
  int sample_rate = 16000;
  double volume_m3 = 0.0;
  double rt60_s = 0.0;  // 0 until measured
  bool rt60_from_t20 = false;
  std::string room_id;
  Vec3 source_pos;
  Vec3 receiver_pos;
};

struct EnergyDecayCurve {
  std::vector<double> values_db;
  int sample_rate = 16000;
};

struct RoomSamplingConfig {
  double volume_min_m3 = 12.0;
  double volume_max_m3 = 21000.0;
  // Ly / Lx and Lz / Lx ranges.
  double width_ratio_min = 1.0;
  double width_ratio_max = 2.0;
  double height_ratio_min = 0.5;
  double height_ratio_max = 1.0;
  double absorption_min = 0.1;
  double absorption_max = 0.6;
  double wall_clearance_m = 0.5;
  double min_separation_m = 1.0;
  int max_retries = 1000;
};

void to_json(nlohmann::json& j, const RoomSamplingConfig& c);
void from_json(const nlohmann::json& j, RoomSamplingConfig& c);

struct SampledRoom {
  ShoeboxRoom room;
  Vec3 source;
  Vec3 receiver;
};

SampledRoom sample_room(Rng& rng, const RoomSamplingConfig& config);

struct ImageArrival {
  double delay_s = 0.0;
  double amplitude = 0.0;
  int order = 0;
};

// Image sources with reflection order <= max_order whose arrival falls within
// max_delay_s (<= 0 disables the time horizon).
std::vector<ImageArrival> enumerate_images(const ShoeboxRoom& room, const Vec3& source,
                                           const Vec3& receiver, int max_order,
                                           double max_delay_s);

struct RirOptions {
  int max_order = -1;           // < 0: adaptive
  double max_duration_s = 0.0;  // <= 0: adaptive
  int sample_rate = 16000;
};

// Time horizon long enough for roughly 60 dB of decay plus margin.
double adaptive_duration(const ShoeboxRoom& room);
// Smallest order that keeps the image set complete inside the sphere of
// radius c * duration around the receiver.
int adaptive_max_order(const ShoeboxRoom& room, double duration_s);

RirRecord image_source_rir(const ShoeboxRoom& room, const Vec3& source, const Vec3& receiver,
                           const RirOptions& options = {});

// Backward-integrated energy decay in dB, normalized to 0 at n = 0 and
// floored at -120 dB.
EnergyDecayCurve schroeder_edc(std::span<const float> rir, int sample_rate);

// T30 read-out: least-squares line on the -5..-35 dB span, extrapolated to
// -60 dB. Throws DataError when the curve never reaches -35 dB.
double estimate_rt60(const EnergyDecayCurve& edc);

struct Rt60Estimate {
  double seconds = 0.0;
  bool used_t20 = false;
};
// T30, falling back to T20 (-5..-25 dB) when the curve is too short.
Rt60Estimate estimate_rt60_with_fallback(const EnergyDecayCurve& edc);

// 0.161 V / A with A the absorption area; rejects any alpha < 0.01.
double sabine_rt60(const ShoeboxRoom& room);

}  // namespace ssbrpe::rir

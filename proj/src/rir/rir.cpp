// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/rir/rir.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::rir {

namespace {

constexpr int kSincHalfTaps = 40;  // 81-tap fractional-delay kernel
constexpr double kWindowHalfWidth = kSincHalfTaps + 1.0;
constexpr double kEdcFloorDb = -120.0;
constexpr double kMaxAdaptiveDuration = 12.0;

// Reflections off the {0, L} walls of one axis for image index u.
std::pair<int, int> wall_hits(int u) {
  const int a = std::abs(u);
  const int near = a / 2, far = a - a / 2;
  // u > 0 first reflects at the far wall, u < 0 at the near wall.
  return u >= 0 ? std::pair{near, far} : std::pair{far, near};
}

double image_coordinate(int u, double length, double s) {
  return (u % 2 == 0) ? u * length + s : (u + 1) * length - s;
}

}  // namespace

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

ShoeboxRoom ShoeboxRoom::uniform(double lx, double ly, double lz, double alpha) {
  ShoeboxRoom r;
  r.dims = {lx, ly, lz};
  r.absorption.fill(alpha);
  return r;
}

double ShoeboxRoom::surface_area() const {
  return 2.0 * (dims[0] * dims[1] + dims[1] * dims[2] + dims[0] * dims[2]);
}

double ShoeboxRoom::absorption_area() const {
  const double ax = dims[1] * dims[2], ay = dims[0] * dims[2], az = dims[0] * dims[1];
  return ax * (absorption[0] + absorption[1]) + ay * (absorption[2] + absorption[3]) +
         az * (absorption[4] + absorption[5]);
}

bool ShoeboxRoom::contains(const Vec3& p) const {
  return p.x > 0 && p.x < dims[0] && p.y > 0 && p.y < dims[1] && p.z > 0 && p.z < dims[2];
}

void ShoeboxRoom::validate() const {
  for (double d : dims) {
    if (!(d > 0.0) || !std::isfinite(d)) throw DomainError("room dimensions must be positive");
  }
  for (double a : absorption) {
    if (!(a > 0.0 && a < 1.0)) throw DomainError("wall absorption must lie in (0, 1)");
  }
  if (!(speed_of_sound > 0.0)) throw DomainError("speed of sound must be positive");
}

SampledRoom sample_room(Rng& rng, const RoomSamplingConfig& cfg) {
  if (!(cfg.volume_min_m3 > 0.0 && cfg.volume_min_m3 <= cfg.volume_max_m3)) {
    throw ConfigError("volume range must be positive and ordered");
  }
  if (!(cfg.absorption_min > 0.0 && cfg.absorption_min <= cfg.absorption_max &&
        cfg.absorption_max < 1.0)) {
    throw ConfigError("absorption range must lie in (0, 1)");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double log_lo = std::log10(cfg.volume_min_m3), log_hi = std::log10(cfg.volume_max_m3);
  const double clearance = cfg.wall_clearance_m;

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const double volume = std::pow(10.0, uniform(log_lo, log_hi));
    const double rw = uniform(cfg.width_ratio_min, cfg.width_ratio_max);
    const double rh = uniform(cfg.height_ratio_min, cfg.height_ratio_max);
    const double lx = std::cbrt(volume / (rw * rh));
    SampledRoom out;
    out.room.dims = {lx, rw * lx, rh * lx};
    for (double& a : out.room.absorption) a = uniform(cfg.absorption_min, cfg.absorption_max);
    if (std::any_of(out.room.dims.begin(), out.room.dims.end(),
                    [&](double d) { return d <= 2.0 * clearance; })) {
      continue;
    }
    auto draw = [&] {
      return Vec3{uniform(clearance, out.room.dims[0] - clearance),
                  uniform(clearance, out.room.dims[1] - clearance),
                  uniform(clearance, out.room.dims[2] - clearance)};
    };
    for (int k = 0; k < cfg.max_retries; ++k) {
      out.source = draw();
      out.receiver = draw();
      if (distance(out.source, out.receiver) >= cfg.min_separation_m) return out;
    }
  }
  throw SamplingError("could not sample a room satisfying clearance/separation constraints after " +
                      std::to_string(cfg.max_retries) + " attempts");
}

std::vector<ImageArrival> enumerate_images(const ShoeboxRoom& room, const Vec3& src,
                                           const Vec3& rcv, int max_order, double max_delay_s) {
  room.validate();
  if (max_order < 0) throw DomainError("max_order must be non-negative");
  if (!room.contains(src) || !room.contains(rcv)) {
    throw DomainError("source and receiver must lie strictly inside the room");
  }
  if (distance(src, rcv) < 1e-9) {
    throw DomainError("degenerate geometry: source and receiver coincide");
  }
  const double c = room.speed_of_sound;
  const double radius = max_delay_s > 0.0 ? c * max_delay_s : HUGE_VAL;
  const double radius2 = radius * radius;
  std::array<double, 6> beta{};
  for (int w = 0; w < 6; ++w) beta[w] = std::sqrt(1.0 - room.absorption[w]);

  auto axis_limit = [&](int axis) {
    if (!std::isfinite(radius)) return max_order;
    const double l = room.dims[axis];
    return std::min(max_order, static_cast<int>(std::ceil(radius / l)) + 2);
  };
  const int nx = axis_limit(0), ny = axis_limit(1), nz = axis_limit(2);

  std::vector<ImageArrival> out;
  for (int ux = -nx; ux <= nx; ++ux) {
    const double dx = image_coordinate(ux, room.dims[0], src.x) - rcv.x;
    if (dx * dx > radius2) continue;
    const auto [hx0, hx1] = wall_hits(ux);
    const double gx = std::pow(beta[0], hx0) * std::pow(beta[1], hx1);
    const int rem_x = max_order - std::abs(ux);
    for (int uy = -std::min(ny, rem_x); uy <= std::min(ny, rem_x); ++uy) {
      const double dy = image_coordinate(uy, room.dims[1], src.y) - rcv.y;
      const double dxy2 = dx * dx + dy * dy;
      if (dxy2 > radius2) continue;
      const auto [hy0, hy1] = wall_hits(uy);
      const double gxy = gx * std::pow(beta[2], hy0) * std::pow(beta[3], hy1);
      const int rem_y = rem_x - std::abs(uy);
      for (int uz = -std::min(nz, rem_y); uz <= std::min(nz, rem_y); ++uz) {
        const double dz = image_coordinate(uz, room.dims[2], src.z) - rcv.z;
        const double d2 = dxy2 + dz * dz;
        if (d2 > radius2) continue;
        const auto [hz0, hz1] = wall_hits(uz);
        const double g = gxy * std::pow(beta[4], hz0) * std::pow(beta[5], hz1);
        const double d = std::sqrt(d2);
        out.push_back({d / c, g / (4.0 * std::numbers::pi * d),
                       std::abs(ux) + std::abs(uy) + std::abs(uz)});
      }
    }
  }
  return out;
}

double adaptive_duration(const ShoeboxRoom& room) {
  const double sabine = 0.161 * room.volume() / room.absorption_area();
  return std::clamp(1.3 * sabine, 0.25, kMaxAdaptiveDuration);
}

int adaptive_max_order(const ShoeboxRoom& room, double duration_s) {
  const double reach = room.speed_of_sound * duration_s;
  const double per_metre = 1.0 / room.dims[0] + 1.0 / room.dims[1] + 1.0 / room.dims[2];
  return static_cast<int>(std::ceil(reach * per_metre)) + 3;
}

RirRecord image_source_rir(const ShoeboxRoom& room, const Vec3& source, const Vec3& receiver,
                           const RirOptions& options) {
  room.validate();
  if (options.sample_rate <= 0) throw DomainError("sample rate must be positive");
  const double duration =
      options.max_duration_s > 0.0 ? options.max_duration_s : adaptive_duration(room);
  const int order =
      options.max_order >= 0 ? options.max_order : adaptive_max_order(room, duration);
  // An explicit order with no explicit horizon keeps every image of that order.
  const double horizon =
      (options.max_order >= 0 && options.max_duration_s <= 0.0) ? 0.0 : duration;
  const auto arrivals = enumerate_images(room, source, receiver, order, horizon);

  const double fs = options.sample_rate;
  double last = 0.0;
  for (const auto& a : arrivals) last = std::max(last, a.delay_s);
  const std::size_t length = static_cast<std::size_t>(std::ceil(last * fs)) + kSincHalfTaps + 2;

  std::array<double, 2 * kSincHalfTaps + 1> cos_k{}, sin_k{};
  for (int k = -kSincHalfTaps; k <= kSincHalfTaps; ++k) {
    cos_k[k + kSincHalfTaps] = std::cos(std::numbers::pi * k / kWindowHalfWidth);
    sin_k[k + kSincHalfTaps] = std::sin(std::numbers::pi * k / kWindowHalfWidth);
  }

  std::vector<double> h(length, 0.0);
  for (const auto& a : arrivals) {
    const double tau = a.delay_s * fs;
    const long n0 = std::lround(tau);
    const double delta = static_cast<double>(n0) - tau;  // in [-0.5, 0.5]
    const double sin_pd = std::sin(std::numbers::pi * delta);
    const double cw = std::cos(std::numbers::pi * delta / kWindowHalfWidth);
    const double sw = std::sin(std::numbers::pi * delta / kWindowHalfWidth);
    for (int k = -kSincHalfTaps; k <= kSincHalfTaps; ++k) {
      const long n = n0 + k;
      if (n < 0 || n >= static_cast<long>(length)) continue;
      const double x = k + delta;
      double sinc;
      if (std::abs(x) < 1e-12) {
        sinc = 1.0;
      } else {
        // sin(pi (k + delta)) = (-1)^k sin(pi delta)
        sinc = ((k & 1) ? -sin_pd : sin_pd) / (std::numbers::pi * x);
      }
      const int idx = k + kSincHalfTaps;
      const double window = 0.5 * (1.0 + cos_k[idx] * cw - sin_k[idx] * sw);
      h[static_cast<std::size_t>(n)] += a.amplitude * window * sinc;
    }
  }

  RirRecord rec;
  rec.samples.assign(h.begin(), h.end());
  rec.sample_rate = options.sample_rate;
  rec.volume_m3 = room.volume();
  rec.source_pos = source;
  rec.receiver_pos = receiver;
  return rec;
}

EnergyDecayCurve schroeder_edc(std::span<const float> rir, int sample_rate) {
  if (rir.empty()) throw DataError("empty impulse response");
  std::vector<double> tail(rir.size());
  double acc = 0.0;
  for (std::size_t i = rir.size(); i-- > 0;) {
    acc += static_cast<double>(rir[i]) * rir[i];
    tail[i] = acc;
  }
  const double total = acc;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DataError("impulse response has no energy");
  }
  EnergyDecayCurve edc;
  edc.sample_rate = sample_rate;
  edc.values_db.resize(rir.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < tail.size(); ++i) {
    double db = tail[i] > 0.0 ? 10.0 * std::log10(tail[i] / total) : kEdcFloorDb;
    db = std::max(db, kEdcFloorDb);
    if (i == 0) db = 0.0;
    // Rounding in the running sum must not break monotonicity.
    db = std::min(db, prev);
    edc.values_db[i] = db;
    prev = db;
  }
  return edc;
}

namespace {

// Every finite response plunges to the floor at its last sample; a crossing
// inside this trailing fraction is truncation, not decay.
constexpr double kTruncationGuard = 0.1;

// Returns -60 / slope of the least-squares fit between the two levels, or a
// negative value when the curve does not reach `lower_db`.
double fit_decay(const EnergyDecayCurve& edc, double upper_db, double lower_db) {
  const auto& v = edc.values_db;
  std::size_t begin = v.size(), end = v.size();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (begin == v.size() && v[i] <= upper_db) begin = i;
    if (v[i] < lower_db) {
      end = i;
      break;
    }
  }
  const auto usable = static_cast<std::size_t>(static_cast<double>(v.size()) * (1.0 - kTruncationGuard));
  if (end >= usable || begin >= end || end - begin < 2) return -1.0;
  const double fs = edc.sample_rate;
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  const double n = static_cast<double>(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const double t = static_cast<double>(i) / fs;
    st += t;
    sy += v[i];
    stt += t * t;
    sty += t * v[i];
  }
  const double slope = (n * sty - st * sy) / (n * stt - st * st);
  if (!(slope < 0.0)) return -1.0;
  return -60.0 / slope;
}

}  // namespace

double estimate_rt60(const EnergyDecayCurve& edc) {
  const double rt = fit_decay(edc, -5.0, -35.0);
  if (rt <= 0.0) throw DataError("insufficient decay: energy decay curve never reaches -35 dB");
  return rt;
}

Rt60Estimate estimate_rt60_with_fallback(const EnergyDecayCurve& edc) {
  const double t30 = fit_decay(edc, -5.0, -35.0);
  if (t30 > 0.0) return {t30, false};
  const double t20 = fit_decay(edc, -5.0, -25.0);
  if (t20 > 0.0) return {t20, true};
  throw DataError("insufficient decay: energy decay curve never reaches -25 dB");
}

double sabine_rt60(const ShoeboxRoom& room) {
  for (double a : room.absorption) {
    if (a < 0.01) throw DomainError("Sabine estimate rejects absorption below 0.01");
  }
  return 0.161 * room.volume() / room.absorption_area();
}

void to_json(nlohmann::json& j, const RoomSamplingConfig& c) {
  j = nlohmann::json{{"volume_m3", {c.volume_min_m3, c.volume_max_m3}},
           {"width_ratio", {c.width_ratio_min, c.width_ratio_max}},
           {"height_ratio", {c.height_ratio_min, c.height_ratio_max}},
           {"absorption", {c.absorption_min, c.absorption_max}},
           {"wall_clearance_m", c.wall_clearance_m},
           {"min_separation_m", c.min_separation_m},
           {"max_retries", c.max_retries}};
}

void from_json(const nlohmann::json& j, RoomSamplingConfig& c) {
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto& r = j.at(key);
    if (!r.is_array() || r.size() != 2) throw ConfigError(std::string(key) + " must be [min, max]");
    lo = r[0].get<double>();
    hi = r[1].get<double>();
  };
  range("volume_m3", c.volume_min_m3, c.volume_max_m3);
  range("width_ratio", c.width_ratio_min, c.width_ratio_max);
  range("height_ratio", c.height_ratio_min, c.height_ratio_max);
  range("absorption", c.absorption_min, c.absorption_max);
  c.wall_clearance_m = j.value("wall_clearance_m", c.wall_clearance_m);
  c.min_separation_m = j.value("min_separation_m", c.min_separation_m);
  c.max_retries = j.value("max_retries", c.max_retries);
}

}  // namespace ssbrpe::rir

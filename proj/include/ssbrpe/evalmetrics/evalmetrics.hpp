// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace ssbrpe::evalmetrics {

struct MetricsReport {
  // Log10 domain.
  double log_mse = 0.0;
  double log_mae = 0.0;
  double pearson_rho = 0.0;
  double mean_mult = 1.0;  // 10^log_mae
  // Linear units.
  double linear_median_abs_err = 0.0;
  double linear_mae = 0.0;
  std::size_t n = 0;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

// Sample correlation. Throws DomainError for n < 2 or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Predictions and ground truth in linear units; both must be positive.
MetricsReport evaluate(std::span<const double> pred_linear, std::span<const double> true_linear);

// Aligned two-column text table.
std::string format_report(const MetricsReport& r, const std::string& unit = "");

// ---- published reference values ---------------------------------------------------

inline constexpr std::size_t kReferenceMetrics = 6;

struct ReferenceRow {
  std::string protocol;  // full_data | limited_data
  std::string target;    // volume | rt60
  std::string method;
  std::string supervision;
  // log_mse, log_mae, pearson_rho, mean_mult, linear_median, linear_mae.
  std::array<std::optional<double>, kReferenceMetrics> values;
  // 95% interval half-widths for the four log-domain metrics.
  std::array<std::optional<double>, 4> ci;
};

std::vector<ReferenceRow> parse_reference_csv(const std::string& text);
// The table bundled into the library at build time.
const std::vector<ReferenceRow>& reference_table();
std::optional<ReferenceRow> find_reference(const std::string& protocol, const std::string& target,
                                           const std::string& method);

// Our report beside every reference row of `protocol` and `target`.
std::string compare_to_reference(const MetricsReport& r, const std::vector<ReferenceRow>& rows,
                                 const std::string& target,
                                 const std::string& protocol = "full_data");

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;  // Student-t interval; 0 when n < 2
  std::size_t n = 0;
};

MeanCi mean_ci(std::span<const double> values, double level = 0.95);

}  // namespace ssbrpe::evalmetrics

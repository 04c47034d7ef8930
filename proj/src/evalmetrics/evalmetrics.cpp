// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include "ssbrpe/evalmetrics/evalmetrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ssbrpe/errors.hpp"

namespace ssbrpe::evalmetrics {

namespace detail {
extern const char* const kReferenceCsv;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"log_mse", r.log_mse},
                     {"log_mae", r.log_mae},
                     {"pearson_rho", r.pearson_rho},
                     {"mean_mult", r.mean_mult},
                     {"linear_median_abs_err", r.linear_median_abs_err},
                     {"linear_mae", r.linear_mae},
                     {"n", r.n}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  r.log_mse = j.at("log_mse").get<double>();
  r.log_mae = j.at("log_mae").get<double>();
  r.pearson_rho = j.at("pearson_rho").get<double>();
  r.mean_mult = j.at("mean_mult").get<double>();
  r.linear_median_abs_err = j.at("linear_median_abs_err").get<double>();
  r.linear_mae = j.at("linear_mae").get<double>();
  r.n = j.at("n").get<std::size_t>();
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 2) throw DomainError("pearson needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("pearson: zero variance, correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

MetricsReport evaluate(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw DimensionError("evaluate: length mismatch");
  if (pred.size() < 2) throw DomainError("evaluate needs at least 2 pairs");
  const std::size_t n = pred.size();
  std::vector<double> p(n), t(n), abs_lin(n);
  double se = 0.0, ae = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pred[i] > 0.0) || !(truth[i] > 0.0) || !std::isfinite(pred[i]) ||
        !std::isfinite(truth[i])) {
      throw DomainError("evaluate: values must be positive and finite (index " +
                        std::to_string(i) + ")");
    }
    p[i] = std::log10(pred[i]);
    t[i] = std::log10(truth[i]);
    const double r = p[i] - t[i];
    se += r * r;
    ae += std::abs(r);
    abs_lin[i] = std::abs(pred[i] - truth[i]);
    lin += abs_lin[i];
  }
  MetricsReport rep;
  rep.n = n;
  rep.log_mse = se / static_cast<double>(n);
  rep.log_mae = ae / static_cast<double>(n);
  rep.mean_mult = std::pow(10.0, rep.log_mae);
  rep.pearson_rho = pearson(p, t);
  rep.linear_mae = lin / static_cast<double>(n);
  std::sort(abs_lin.begin(), abs_lin.end());
  rep.linear_median_abs_err =
      n % 2 == 1 ? abs_lin[n / 2] : 0.5 * (abs_lin[n / 2 - 1] + abs_lin[n / 2]);
  return rep;
}

std::string format_report(const MetricsReport& r, const std::string& unit) {
  const std::string u = unit.empty() ? "" : " (" + unit + ")";
  const std::vector<std::pair<std::string, double>> rows{
      {"log MSE", r.log_mse},
      {"log MAE", r.log_mae},
      {"Pearson rho", r.pearson_rho},
      {"MeanMult", r.mean_mult},
      {"median abs err" + u, r.linear_median_abs_err},
      {"MAE" + u, r.linear_mae},
  };
  std::size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  std::ostringstream out;
  char buf[64];
  for (const auto& [k, v] : rows) {
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    out << k << std::string(width - k.size() + 2, ' ') << buf << '\n';
  }
  out << "n" << std::string(width + 1, ' ') << r.n << '\n';
  return out.str();
}

// ---- reference table -------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_cell(const std::string& s, std::size_t line_no) {
  if (s == "NA" || s.empty()) return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) {
    throw DataError("reference table line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return v;
}

std::string cell(const std::optional<double>& v, const char* fmt) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof(buf), fmt, *v);
  return buf;
}

}  // namespace

std::vector<ReferenceRow> parse_reference_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<ReferenceRow> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line_no == 1) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4 + kReferenceMetrics + 4) {
      throw DataError("reference table line " + std::to_string(line_no) + ": expected 14 fields");
    }
    ReferenceRow r{f[0], f[1], f[2], f[3], {}, {}};
    for (std::size_t k = 0; k < kReferenceMetrics; ++k) r.values[k] = parse_cell(f[4 + k], line_no);
    for (std::size_t k = 0; k < 4; ++k) r.ci[k] = parse_cell(f[10 + k], line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

const std::vector<ReferenceRow>& reference_table() {
  static const std::vector<ReferenceRow> rows = parse_reference_csv(detail::kReferenceCsv);
  return rows;
}

std::optional<ReferenceRow> find_reference(const std::string& protocol, const std::string& target,
                                           const std::string& method) {
  for (const auto& r : reference_table()) {
    if (r.protocol == protocol && r.target == target && r.method == method) return r;
  }
  return std::nullopt;
}

std::string compare_to_reference(const MetricsReport& r, const std::vector<ReferenceRow>& rows,
                                 const std::string& target, const std::string& protocol) {
  std::vector<std::vector<std::string>> table;
  table.push_back({"method", "log MSE", "log MAE", "rho", "MM", "median", "MAE"});
  table.push_back({"this run (n=" + std::to_string(r.n) + ")", cell(r.log_mse, "%.4f"),
                   cell(r.log_mae, "%.4f"), cell(r.pearson_rho, "%.4f"),
                   cell(r.mean_mult, "%.4f"), cell(r.linear_median_abs_err, "%.2f"),
                   cell(r.linear_mae, "%.2f")});
  for (const auto& ref : rows) {
    if (ref.target != target || ref.protocol != protocol) continue;
    std::vector<std::string> line{ref.method};
    for (std::size_t k = 0; k < kReferenceMetrics; ++k) {
      line.push_back(cell(ref.values[k], k < 4 ? "%.4f" : "%.2f"));
    }
    table.push_back(std::move(line));
  }
  std::vector<std::size_t> width(table.front().size(), 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        out << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
      }
    }
    out << '\n';
  }
  return out.str();
}

MeanCi mean_ci(std::span<const double> values, double level) {
  if (values.empty()) throw DomainError("mean_ci needs at least one value");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("confidence level must lie in (0, 1)");
  MeanCi out;
  out.n = values.size();
  double s = 0.0;
  for (double v : values) s += v;
  out.mean = s / static_cast<double>(out.n);
  if (out.n < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(out.n - 1));
  boost::math::students_t dist(static_cast<double>(out.n - 1));
  const double q = boost::math::quantile(dist, 0.5 + level / 2.0);
  out.half_width = q * sd / std::sqrt(static_cast<double>(out.n));
  return out;
}

}  // namespace ssbrpe::evalmetrics

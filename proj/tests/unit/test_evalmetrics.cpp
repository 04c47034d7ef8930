// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "ssbrpe/errors.hpp"
#include "ssbrpe/evalmetrics/evalmetrics.hpp"

using namespace ssbrpe;
using namespace ssbrpe::evalmetrics;

TEST_SUITE("evalmetrics") {

TEST_CASE("perfect predictions") {
  const std::vector<double> y{10.0, 50.0, 300.0, 2000.0};
  const auto r = evaluate(y, y);
  CHECK(r.log_mse == 0.0);
  CHECK(r.log_mae == 0.0);
  CHECK(r.pearson_rho == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.mean_mult == 1.0);
  CHECK(r.linear_median_abs_err == 0.0);
  CHECK(r.linear_mae == 0.0);
  CHECK(r.n == 4);
}

TEST_CASE("worked example") {
  const std::vector<double> truth{10.0, 100.0}, pred{20.0, 50.0};
  const auto r = evaluate(pred, truth);
  CHECK(r.log_mae == doctest::Approx(0.30103).epsilon(1e-5));
  CHECK(r.mean_mult == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.linear_mae == doctest::Approx(30.0));
  CHECK(r.linear_median_abs_err == doctest::Approx(30.0));
  CHECK(r.log_mse == doctest::Approx(std::log10(2.0) * std::log10(2.0)));
}

TEST_CASE("constant ratio") {
  const std::vector<double> truth{3.0, 30.0, 70.0, 900.0, 12.0};
  std::vector<double> pred;
  for (double t : truth) pred.push_back(2.0 * t);
  const auto r = evaluate(pred, truth);
  CHECK(r.mean_mult == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.log_mae == doctest::Approx(0.30103).epsilon(1e-5));
  CHECK(r.log_mse == doctest::Approx(r.log_mae * r.log_mae).epsilon(1e-12));
  CHECK(r.linear_median_abs_err == doctest::Approx(30.0));
}

TEST_CASE("permutation invariance and bounds") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(1.0, 1000.0);
  std::vector<double> p(50), t(50);
  for (std::size_t i = 0; i < 50; ++i) {
    p[i] = u(rng);
    t[i] = u(rng);
  }
  const auto a = evaluate(p, t);
  std::vector<std::size_t> idx(50);
  for (std::size_t i = 0; i < 50; ++i) idx[i] = 49 - i;
  std::vector<double> p2, t2;
  for (auto i : idx) {
    p2.push_back(p[i]);
    t2.push_back(t[i]);
  }
  const auto b = evaluate(p2, t2);
  CHECK(a.log_mse == doctest::Approx(b.log_mse).epsilon(1e-12));
  CHECK(a.pearson_rho == doctest::Approx(b.pearson_rho).epsilon(1e-12));
  CHECK(a.linear_median_abs_err == b.linear_median_abs_err);
  CHECK(a.mean_mult >= 1.0);
  CHECK(std::abs(a.pearson_rho) <= 1.0);
  CHECK(a.mean_mult == std::pow(10.0, a.log_mae));
}

TEST_CASE("evaluate rejects bad input") {
  CHECK_THROWS_AS(evaluate(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 2.0}), DomainError);
  CHECK_THROWS_AS(evaluate(std::vector<double>{1.0, 2.0}, std::vector<double>{-1.0, 2.0}), DomainError);
  CHECK_THROWS_AS(evaluate(std::vector<double>{1.0}, std::vector<double>{1.0}), DomainError);
  CHECK_THROWS_AS(evaluate(std::vector<double>{1.0, 2.0}, std::vector<double>{3.0, 3.0}), DomainError);
}

TEST_CASE("pearson") {
  std::vector<double> x{1, 2, 3, 4, 5}, y, z;
  for (double v : x) {
    y.push_back(2.0 * v + 1.0);
    z.push_back(-v);
  }
  CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(pearson(x, z) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK_THROWS_AS(pearson(x, std::vector<double>(5, 1.0)), DomainError);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  std::vector<double> a(100), b(100);
  for (std::size_t i = 0; i < 100; ++i) {
    a[i] = g(rng);
    b[i] = 0.3 * a[i] + g(rng);
  }
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= 100;
  mb /= 100;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const double oracle = static_cast<double>(sab / std::sqrt(saa * sbb));
  CHECK(std::abs(pearson(a, b) - oracle) < 1e-10);
}

TEST_CASE("bundled reference table") {
  const auto vol = find_reference("full_data", "volume", "SS-BRPE w/ Feature AUG");
  REQUIRE(vol);
  const std::array<double, 6> want{0.1652, 0.2721, 0.8965, 1.8773, 223.69, 1470.56};
  for (std::size_t k = 0; k < 6; ++k) CHECK(*vol->values[k] == want[k]);

  const auto rt = find_reference("full_data", "rt60", "SS-BRPE w/ Feature AUG");
  REQUIRE(rt);
  const std::array<double, 6> want_rt{0.0370, 0.1312, 0.9720, 1.3529, 0.08, 0.39};
  for (std::size_t k = 0; k < 6; ++k) CHECK(*rt->values[k] == want_rt[k]);

  const auto ss = find_reference("full_data", "rt60", "SS-BRPE");
  REQUIRE(ss);
  const std::array<double, 6> want_ss{0.0479, 0.1470, 0.9633, 1.4029, 0.09, 0.49};
  for (std::size_t k = 0; k < 6; ++k) CHECK(*ss->values[k] == want_ss[k]);

  const auto lim = find_reference("limited_data", "volume", "SS-BRPE");
  REQUIRE(lim);
  CHECK(*lim->values[0] == 0.2691);
  CHECK(*lim->ci[0] == 0.0035);
  CHECK_FALSE(lim->values[4].has_value());

  CHECK(reference_table().size() == 20);
  CHECK_FALSE(find_reference("full_data", "rt60", "CRNN")->values[3].has_value());
}

TEST_CASE("comparison table") {
  const std::vector<double> y{10.0, 100.0};
  const auto text = compare_to_reference(evaluate(std::vector<double>{20.0, 50.0}, y),
                                         reference_table(), "volume");
  CHECK(text.find("SS-BRPE w/ Feature AUG") != std::string::npos);
  CHECK(text.find("1470.56") != std::string::npos);
  CHECK(text.find("this run (n=2)") != std::string::npos);
  CHECK(text.find("0.3863") != std::string::npos);
  CHECK(text.find("0.0370") == std::string::npos);
  CHECK_THROWS_AS(parse_reference_csv("h\na,b,c\n"), DataError);
}

TEST_CASE("mean and interval") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
  const auto ci = mean_ci(v);
  CHECK(ci.mean == 3.0);
  // t(0.975, 4) = 2.776445
  CHECK(ci.half_width == doctest::Approx(2.776445 * std::sqrt(2.5) / std::sqrt(5.0)).epsilon(1e-6));
  CHECK(mean_ci(std::vector<double>{7.0}).half_width == 0.0);
}

TEST_CASE("report json round trip") {
  const auto r = evaluate(std::vector<double>{20.0, 50.0}, std::vector<double>{10.0, 100.0});
  nlohmann::json j = r;
  const auto back = j.get<MetricsReport>();
  CHECK(back.log_mae == r.log_mae);
  CHECK(back.n == 2);
  CHECK(format_report(r, "m3").find("MeanMult") != std::string::npos);
}

}  // TEST_SUITE

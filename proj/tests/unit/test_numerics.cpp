// Copyright 2026 The ssbrpe Authors
//
// Licensed under the Apache License, Version 2.0

#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "ssbrpe/errors.hpp"
#include "ssbrpe/numerics/adam.hpp"
#include "ssbrpe/numerics/tensor.hpp"

using namespace ssbrpe;
using namespace ssbrpe::nn;
using ssbrpe::testing::grad_check;
using ssbrpe::testing::random_array;

TEST_SUITE("numerics") {

TEST_CASE("matmul identity and zero") {
  const Array i2(2, 2, {1, 0, 0, 1});
  const Array a(2, 2, {1, 2, 3, 4});
  CHECK(matmul(constant(i2), constant(a)).value() == a);
  CHECK(matmul(constant(a), constant(Array({2, 2}, 0.0f))).value() == Array({2, 2}, 0.0f));
}

TEST_CASE("matmul shape mismatch") {
  CHECK_THROWS_AS(matmul(constant(Array({2, 3})), constant(Array({2, 3}))), DimensionError);
}

TEST_CASE("matmul gradient against a float64 central difference at h=1e-3") {
  Rng rng = make_stream(1, 0);
  Parameter a(random_array({3, 3}, rng)), b(random_array({3, 3}, rng));
  backward(sum(matmul(a.tensor(), b.tensor())));
  auto loss64 = [&](const std::vector<double>& av) {
    double s = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) s += av[i * 3 + k] * b.value()[k * 3 + j];
    return s;
  };
  const double h = 1e-3;
  double worst = 0;
  for (std::size_t i = 0; i < 9; ++i) {
    std::vector<double> up(a.value().vec().begin(), a.value().vec().end()), down = up;
    up[i] += h;
    down[i] -= h;
    const double num = (loss64(up) - loss64(down)) / (2 * h);
    worst = std::max(worst, std::abs(num - a.grad()[i]) / std::abs(num));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backward basic cases") {
  Parameter p(Array({3}, std::vector<float>{1, 2, 3}));
  backward(sum(p.tensor()));
  CHECK(p.grad() == Array({3}, std::vector<float>{1, 1, 1}));
  p.zero_grad();
  backward(sum(mul(p.tensor(), p.tensor())));
  CHECK(p.grad() == Array({3}, std::vector<float>{2, 4, 6}));
}

TEST_CASE("backward accumulates without zeroing") {
  Parameter p(Array({3}, std::vector<float>{1, 2, 3}));
  const Tensor loss = sum(mul(p.tensor(), p.tensor()));
  backward(loss);
  backward(loss);
  CHECK(p.grad() == Array({3}, std::vector<float>{4, 8, 12}));
}

TEST_CASE("backward rejects non-scalar root") {
  Parameter p(Array({3}, 1.0f));
  CHECK_THROWS_AS(backward(scale(p.tensor(), 2.0f)), ContractError);
}

TEST_CASE("non-finite results raise numeric error") {
  const Array big({2}, 3e38f);
  CHECK_THROWS_AS(add(constant(big), constant(big)), NumericError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng = make_stream(2, 0);
  const Array x = random_array({5, 7}, rng, -10, 10);
  const Array s = softmax(constant(x)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double z = 0;
    for (float v : s.row(r)) z += v;
    CHECK(z == doctest::Approx(1.0).epsilon(1e-6));
  }
  Array shifted = x;
  for (float& v : shifted.vec()) v += 100.0f;
  const Array s2 = softmax(constant(shifted)).value();
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s2[i] == doctest::Approx(s[i]).epsilon(1e-5));
}

TEST_CASE("layer_norm normalizes rows") {
  Rng rng = make_stream(3, 0);
  const Array x = random_array({4, 32}, rng, -5, 5);
  const Array y =
      layer_norm(constant(x), constant(Array({32}, 1.0f)), constant(Array({32}, 0.0f))).value();
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (float v : y.row(r)) mu += v;
    mu /= 32;
    for (float v : y.row(r)) var += (v - mu) * (v - mu);
    var /= 32;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("mean and mse values") {
  const Array x(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(mean(constant(x), 0).value() == Array({3}, std::vector<float>{2.5f, 3.5f, 4.5f}));
  CHECK(mean(constant(x), 1).value() == Array({2}, std::vector<float>{2, 5}));
  const Array y(2, 3, {2, 3, 4, 5, 6, 7});
  CHECK(mse(constant(x), constant(y)).item() == doctest::Approx(1.0));
}

TEST_CASE("gelu reference values") {
  const Array x({3}, std::vector<float>{-1, 0, 1});
  const Array y = gelu(constant(x)).value();
  CHECK(y[0] == doctest::Approx(-0.158655).epsilon(1e-5));
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == doctest::Approx(0.841345).epsilon(1e-5));
}

TEST_CASE("primitive gradients match central differences") {
  Rng rng = make_stream(4, 0);
  Parameter a(random_array({3, 4}, rng)), b(random_array({3, 4}, rng));
  Parameter w(random_array({4, 5}, rng)), v(random_array({4}, rng));
  Parameter g(random_array({4}, rng, 0.5f, 1.5f)), bb(random_array({4}, rng));
  Parameter c(random_array({3, 4}, rng));  // fixed weights to make sums non-trivial
  c.set_trainable(false);
  const Tensor ct = c.tensor();
  const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
      {"add", [&] { return sum(mul(add(a.tensor(), b.tensor()), ct)); }},
      {"sub", [&] { return sum(mul(sub(a.tensor(), b.tensor()), ct)); }},
      {"mul", [&] { return sum(mul(mul(a.tensor(), b.tensor()), ct)); }},
      {"scale", [&] { return sum(mul(scale(a.tensor(), -1.7f), ct)); }},
      {"matmul", [&] { return sum(matmul(a.tensor(), w.tensor())); }},
      {"transpose", [&] { return sum(matmul(transpose(a.tensor()), b.tensor())); }},
      {"add_row", [&] { return sum(mul(add_row(a.tensor(), v.tensor()), ct)); }},
      {"softmax", [&] { return sum(mul(softmax(a.tensor()), ct)); }},
      {"layer_norm",
       [&] { return sum(mul(layer_norm(a.tensor(), g.tensor(), bb.tensor()), ct)); }},
      {"gelu", [&] { return sum(mul(gelu(a.tensor()), ct)); }},
      {"mean0", [&] { return sum(mul(mean(a.tensor(), 0), v.tensor())); }},
      {"mean1", [&] { return sum(mul(mean(a.tensor(), 1, true), mean(ct, 1, true))); }},
      {"mse", [&] { return mse(a.tensor(), b.tensor()); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    const auto r = grad_check({{"a", a}, {"b", b}, {"w", w}, {"v", v}, {"g", g}, {"bb", bb}}, fn);
    CHECK_MESSAGE(r.max_rel_err < 1e-3, r.worst);
  }
}

TEST_CASE("row ops and attention gradients") {
  Rng rng = make_stream(5, 0);
  Parameter x(random_array({6, 8}, rng)), tok(random_array({8}, rng));
  Parameter q(random_array({6, 8}, rng)), k(random_array({6, 8}, rng));
  Parameter c(random_array({6, 8}, rng));
  c.set_trainable(false);
  const std::vector<std::size_t> rows{1, 4};
  const std::vector<std::size_t> targets{0, 3, 5, 2, 1, 4};
  const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
      {"slice", [&] { return sum(mul(slice_rows(x.tensor(), 1, 4), slice_rows(c.tensor(), 0, 3))); }},
      {"gather", [&] { return sum(mul(gather_rows(x.tensor(), rows), gather_rows(c.tensor(), rows))); }},
      {"replace", [&] { return sum(mul(replace_rows(x.tensor(), rows, tok.tensor()), c.tensor())); }},
      {"concat",
       [&] {
         const std::vector<Tensor> parts{x.tensor(), q.tensor()};
         return sum(mul(concat_rows(parts), concat_rows(std::vector<Tensor>{c.tensor(), c.tensor()})));
       }},
      {"attention",
       [&] {
         return sum(mul(multi_head_attention(q.tensor(), k.tensor(), x.tensor(), 2), c.tensor()));
       }},
      {"cross_entropy",
       [&] { return cross_entropy_rows(matmul(q.tensor(), transpose(k.tensor())), targets); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    const auto r = grad_check({{"x", x}, {"tok", tok}, {"q", q}, {"k", k}}, fn);
    CHECK_MESSAGE(r.max_rel_err < 1e-3, r.worst);
  }
}

TEST_CASE("attention rows sum to one per head") {
  Rng rng = make_stream(6, 0);
  const Tensor q = constant(random_array({5, 8}, rng)), k = constant(random_array({5, 8}, rng));
  Array probs;
  multi_head_attention(q, k, q, 4, &probs);
  REQUIRE(probs.shape() == Shape{4, 5, 5});
  for (std::size_t r = 0; r < 20; ++r) {
    double z = 0;
    for (std::size_t j = 0; j < 5; ++j) z += probs[r * 5 + j];
    CHECK(std::abs(z - 1.0) < 1e-6);
  }
}

TEST_CASE("detach blocks gradient") {
  Parameter p(Array({2}, 1.0f));
  backward(sum(mul(p.tensor(), detach(p.tensor()))));
  CHECK(p.grad() == Array({2}, 1.0f));
}

TEST_CASE("adam first step and zero grad") {
  AdamConfig cfg;
  cfg.lr = 1e-3;
  Parameter p(Array({4}, 0.5f));
  p.grad() = Array({4}, 1.0f);
  AdamState s = AdamState::fresh(p.shape(), cfg);
  adam_step(p, s);
  for (float v : p.value().vec()) CHECK(v - 0.5f == doctest::Approx(-1e-3).epsilon(1e-3));
  CHECK(s.step_count == 1);

  Parameter q(Array({3}, 2.0f));
  q.grad() = Array({3}, 0.0f);
  AdamState s2 = AdamState::fresh(q.shape(), cfg);
  adam_step(q, s2);
  CHECK(q.value() == Array({3}, 2.0f));
}

TEST_CASE("adam minimizes a quadratic bowl") {
  AdamConfig cfg;
  cfg.lr = 0.05;
  Parameter p(Array({1}, 1.0f));
  Adam opt({p}, cfg);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    backward(sum(mul(p.tensor(), p.tensor())));
    opt.step();
  }
  CHECK(std::abs(p.value()[0]) < 1e-2);
}

TEST_CASE("adam weight decay shrinks without gradient") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  Parameter p(Array({1}, 1.0f));
  p.grad() = Array({1}, 0.0f);
  AdamState s = AdamState::fresh(p.shape(), cfg);
  adam_step(p, s);
  CHECK(p.value()[0] == doctest::Approx(0.95f));
}

TEST_CASE("ops are bitwise deterministic") {
  auto run = [] {
    Rng rng = make_stream(9, 0);
    const Tensor a = constant(random_array({16, 32}, rng));
    const Tensor w = constant(random_array({32, 32}, rng));
    return multi_head_attention(matmul(a, w), a, a, 4).value();
  };
  CHECK(bitwise_equal(run(), run()));
}

}  // TEST_SUITE

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_support.hpp"
#include "urgr/error.hpp"
#include "urgr/nn/ops.hpp"
#include "urgr/nn/optim.hpp"
#include "urgr/nn/params.hpp"

using namespace urgr;
using namespace urgr::nn;
using urgr::testing::check_gradients;
using urgr::testing::random_tensor;

namespace {

Var param(const Shape& shape, Rng& rng, double s = 1.0) { return Var(random_tensor(shape, rng, s), true); }

// Scalar probe: fixed random projection of an op output.
Var probe(const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  return weighted_sum(out, random_tensor(out.shape(), rng));
}

void expect_grads(const std::function<Var()>& loss, std::vector<std::pair<std::string, Var>> vars, int samples = 40) {
  const auto r = check_gradients(loss, std::move(vars), samples, 99);
  INFO(r.worst);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < 1e-4);
}

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(1);
  Var a = param({3, 4}, rng), b = param({3, 4}, rng);
  expect_grads([&] { return probe(add(mul(a, b), sub(a, scale(b, 0.3))), 2); }, {{"a", a}, {"b", b}});
  expect_grads([&] { return mean(mul(a, a)); }, {{"a", a}});
  expect_grads([&] { return sum(scale(a, -2.0)); }, {{"a", a}});
  Var c = param({2, 3, 4}, rng), r = param({3, 4}, rng);
  expect_grads([&] { return probe(add_broadcast(c, r), 31); }, {{"c", c}, {"r", r}});
  CHECK(add_broadcast(c, r).value()[13] == c.value()[13] + r.value()[1]);
  CHECK_THROWS_AS(add_broadcast(c, param({4, 3}, rng)), InvalidArgument);
}

TEST_CASE("shape ops gradients") {
  Rng rng(2);
  Var a = param({2, 3, 4}, rng), b = param({2, 2, 4}, rng);
  expect_grads([&] { return probe(permute(a, {2, 0, 1}), 3); }, {{"a", a}});
  expect_grads([&] { return probe(reshape(a, {6, 4}), 4); }, {{"a", a}});
  expect_grads([&] { return probe(concat({a, b}, 1), 5); }, {{"a", a}, {"b", b}});
  expect_grads([&] { return probe(mean_axis(a, 1), 6); }, {{"a", a}});
}

TEST_CASE("permute moves elements") {
  Tensor t(Shape{2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  const Var p = permute(Var(t), {1, 0});
  CHECK(p.shape() == Shape{3, 2});
  CHECK(p.value().values() == std::vector<double>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("linear and bmm gradients") {
  Rng rng(3);
  Var x = param({2, 5, 4}, rng), w = param({4, 3}, rng), b = param({3}, rng);
  expect_grads([&] { return probe(linear(x, w, b), 7); }, {{"x", x}, {"w", w}, {"b", b}});
  Var p = param({2, 3, 4}, rng), q = param({2, 4, 5}, rng), r = param({2, 5, 4}, rng);
  expect_grads([&] { return probe(bmm(p, q), 8); }, {{"p", p}, {"q", q}});
  expect_grads([&] { return probe(bmm(p, r, true), 9); }, {{"p", p}, {"r", r}});
}

TEST_CASE("conv2d gradients and shapes") {
  Rng rng(4);
  Var x = param({2, 3, 7, 6}, rng), w = param({4, 3, 3, 3}, rng, 0.3), b = param({4}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      expect_grads([&] { return probe(conv2d(x, w, b, stride, pad), 10 + stride + pad); },
                   {{"x", x}, {"w", w}, {"b", b}});
    }
  }
  CHECK(conv2d(x, w, b, 2, 1).shape() == Shape{2, 4, 4, 3});
  CHECK(conv2d(x, w, {}, 1, 1).shape() == Shape{2, 4, 7, 6});
  CHECK_THROWS_AS(conv2d(x, param({4, 2, 3, 3}, rng), b, 1, 1), InvalidArgument);
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(5);
  Var x = param({1, 2, 5, 5}, rng), w = param({3, 2, 3, 3}, rng), b = param({3}, rng);
  const Var y = conv2d(x, w, b, 2, 1);
  for (int o = 0; o < 3; ++o) {
    for (int oy = 0; oy < 3; ++oy) {
      for (int ox = 0; ox < 3; ++ox) {
        double acc = b.value()[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              acc += w.value()[((o * 2 + c) * 3 + ky) * 3 + kx] * x.value()[(c * 5 + iy) * 5 + ix];
            }
        CHECK(std::abs(y.value()[(o * 3 + oy) * 3 + ox] - acc) < 1e-12);
      }
    }
  }
}

TEST_CASE("batch norm") {
  Rng rng(6);
  Var x = param({3, 2, 4, 4}, rng), g = param({2}, rng), b = param({2}, rng);
  Var rm(Tensor({2}, 0.0)), rv(Tensor({2}, 1.0));
  SUBCASE("training-mode gradients") {
    expect_grads([&] { return probe(batch_norm2d(x, g, b, rm, rv, true), 12); }, {{"x", x}, {"g", g}, {"b", b}});
  }
  SUBCASE("eval-mode gradients") {
    expect_grads([&] { return probe(batch_norm2d(x, g, b, rm, rv, false), 13); }, {{"x", x}, {"g", g}, {"b", b}});
  }
  SUBCASE("training output is normalised per channel and running stats move") {
    Var one(Tensor({2}, 1.0)), zero(Tensor({2}, 0.0));
    const Var y = batch_norm2d(x, one, zero, rm, rv, true);
    for (int c = 0; c < 2; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < 3; ++n)
        for (int i = 0; i < 16; ++i) {
          const double v = y.value()[(n * 2 + c) * 16 + i];
          s += v;
          s2 += v * v;
        }
      CHECK(std::abs(s / 48) < 1e-12);
      CHECK(std::abs(s2 / 48 - 1.0) < 1e-3);
    }
    CHECK(rm.value()[0] != 0.0);
  }
}

TEST_CASE("layer norm, activations, softmax, glu") {
  Rng rng(7);
  Var x = param({3, 5, 6}, rng), g = param({6}, rng), b = param({6}, rng);
  expect_grads([&] { return probe(layer_norm(x, g, b), 14); }, {{"x", x}, {"g", g}, {"b", b}});
  expect_grads([&] { return probe(selu(x), 15); }, {{"x", x}});
  expect_grads([&] { return probe(sigmoid(x), 16); }, {{"x", x}});
  expect_grads([&] { return probe(gelu(x), 17); }, {{"x", x}});
  expect_grads([&] { return probe(softmax(x), 18); }, {{"x", x}});
  expect_grads([&] { return probe(glu(x), 19); }, {{"x", x}});

  const Var s = softmax(x);
  for (int r = 0; r < 15; ++r) {
    double row = 0.0;
    for (int i = 0; i < 6; ++i) row += s.value()[r * 6 + i];
    CHECK(std::abs(row - 1.0) < 1e-12);
  }
  CHECK(glu(x).shape() == Shape{3, 5, 3});
  CHECK_THROWS_AS(glu(param({2, 5}, rng)), InvalidArgument);
}

TEST_CASE("pooling and resampling gradients") {
  Rng rng(8);
  Var x = param({2, 2, 8, 8}, rng);
  expect_grads([&] { return probe(avg_pool2d(x, 4), 20); }, {{"x", x}});
  expect_grads([&] { return probe(upsample_nearest2d(x, 2), 21); }, {{"x", x}});
  expect_grads([&] { return probe(resize_bicubic2d(x, 16, 12), 22); }, {{"x", x}});
  expect_grads([&] { return probe(resize_bicubic2d(x, 3, 5), 23); }, {{"x", x}});
  CHECK_THROWS_AS(avg_pool2d(x, 3), InvalidArgument);
}

TEST_CASE("losses") {
  Rng rng(9);
  Var p = param({2, 3, 4}, rng), t = param({2, 3, 4}, rng);
  expect_grads([&] { return mse_loss(p, t); }, {{"p", p}, {"t", t}});
  Var logits = param({4, 6}, rng);
  const std::vector<int> labels{0, 5, 2, 2};
  expect_grads([&] { return cross_entropy_logits(logits, labels); }, {{"logits", logits}});

  SUBCASE("uniform logits give ln 6") {
    const Var l = cross_entropy_logits(Var(Tensor({1, 6}, 0.0)), {3});
    CHECK(std::abs(l.value().item() - std::log(6.0)) < 1e-12);
  }
  SUBCASE("shift invariance") {
    Tensor shifted = logits.value();
    for (double& v : shifted.values()) v += 123.0;
    const double a = cross_entropy_logits(logits, labels).value().item();
    const double b = cross_entropy_logits(Var(shifted), labels).value().item();
    CHECK(std::abs(a - b) < 1e-10);
  }
}

TEST_CASE("dropout") {
  Rng rng(10);
  Var x(Tensor({1000}, 1.0), true);
  Rng d1(3), d2(3);
  const Var a = dropout(x, 0.4, d1);
  const Var b = dropout(x, 0.4, d2);
  CHECK(a.value() == b.value());
  int zeros = 0;
  for (double v : a.value().values()) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.6) < 1e-12));
    zeros += v == 0.0;
  }
  CHECK(zeros > 300);
  CHECK(zeros < 500);
  CHECK(dropout(x, 0.0, rng).value() == x.value());
  Var y = param({3, 7}, rng);
  expect_grads(
      [&] {
        Rng r(4);
        return probe(selu(dropout(y, 0.4, r)), 30);
      },
      {{"y", y}});
  CHECK_THROWS_AS(dropout(x, 1.0, rng), InvalidArgument);
}

TEST_CASE("no-grad guard stops graph recording") {
  Var w(Tensor({2, 2}, 1.0), true);
  Var x(Tensor({1, 2}, 1.0));
  {
    NoGradGuard guard;
    CHECK_FALSE(linear(x, w).requires_grad());
  }
  CHECK(linear(x, w).requires_grad());
}

TEST_CASE("AdamW minimises a quadratic") {
  ParamStore store;
  Var& w = store.add("w", Tensor({3}, std::vector<double>{3.0, -2.0, 0.5}));
  AdamW opt(store, AdamConfig{0.05});
  const Var target(Tensor({3}, std::vector<double>{1.0, 1.0, 1.0}));
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 400; ++i) {
    Var loss = mse_loss(w, target);
    if (i == 0) first = loss.value().item();
    last = loss.value().item();
    backward(loss);
    opt.step();
  }
  CHECK(last < 1e-3 * first);
  CHECK(opt.steps() == 400);
}

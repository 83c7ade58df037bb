#include <doctest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "ucdg/gradcheck.hpp"
#include "ucdg/ops.hpp"
#include "ucdg/text.hpp"

using namespace ucdg;
using testutil::random_tensor;

TEST_CASE("text helpers") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(parse_double(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(parse_int(" -7 ") == -7);
  CHECK(parse_size("12") == 12);
  CHECK_THROWS_AS(parse_size("-1"), ParseError);
  CHECK_THROWS_AS(parse_double("1.5x"), ParseError);
  CHECK(parse_bool("true"));
  CHECK_FALSE(parse_bool("0"));

  auto kv = parse_key_values("# comment\na = 1\n\nb=two # trailing\n");
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "two");
  try {
    parse_key_values("a = 1\na = 2\n");
    FAIL("duplicate key accepted");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_key_values("novalue\n"), ParseError);
}

TEST_CASE("tensor invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS(t.at({2, 0}));
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("primitive forward values") {
  Tape tape;
  CHECK(relu(tape.constant(Tensor({3}, {-1, 0, 2}))).value() == Tensor({3}, {0, 0, 2}));
  CHECK(sigmoid(tape.constant(Tensor::scalar(0.0))).value().item() == 0.5);
  CHECK(sigmoid(tape.constant(Tensor::scalar(-800.0))).value().item() == 0.0);

  // Symmetric zero padding: the centre tap is the identity, a leading tap
  // shifts the signal by one frame.
  Var signal = tape.constant(Tensor({1, 1, 4, 1}, {1, 2, 3, 4}));
  CHECK(conv_time(signal, tape.constant(Tensor({1, 1, 3}, {0, 1, 0})), std::nullopt, 1).value().to_vector() ==
        std::vector<double>{1, 2, 3, 4});
  CHECK(conv_time(signal, tape.constant(Tensor({1, 1, 3}, {1, 0, 0})), std::nullopt, 1).value().to_vector() ==
        std::vector<double>{0, 1, 2, 3});
  Var long_signal = tape.constant(Tensor({1, 1, 96, 1}, 1.0));
  CHECK(conv_time(long_signal, tape.constant(Tensor({1, 1, 3}, 1.0)), std::nullopt, 2).value().dim(2) == 48);
  CHECK_THROWS_AS(conv_time(signal, tape.constant(Tensor({1, 1, 2}, 1.0)), std::nullopt, 1), ShapeError);

  CHECK(interp_time(tape.constant(Tensor({1, 1, 2, 1}, {0, 2})), 3).value().to_vector() == std::vector<double>{0, 1, 2});
  CHECK(interp_time(tape.constant(Tensor({1, 1, 3, 2}, 7.0)), 8).value() == Tensor({1, 1, 8, 2}, 7.0));

  CHECK(time_diff(tape.constant(Tensor({4}, {1, 4, 9, 16})), 0, 2).value().to_vector() == std::vector<double>{8, 12});
  CHECK(l2_norm_last(tape.constant(Tensor({1, 3}, {3, 4, 0}))).value().item() == 5.0);
}

TEST_CASE("shape errors name the operation and both shapes") {
  Tape tape;
  try {
    add(tape.constant(Tensor({2, 3})), tape.constant(Tensor({3, 2})));
    FAIL("mismatch accepted");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(3,2)") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("backward: analytic examples") {
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0).set_requires_grad(true));
    tape.backward(mul(x, x));
    CHECK(tape.grad(x).item() == 6.0);
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {-1, 2}).set_requires_grad(true));
    tape.backward(sum(relu(x)));
    CHECK(tape.grad(x).to_vector() == std::vector<double>{0, 1});
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(0.0).set_requires_grad(true));
    tape.backward(sigmoid(x));
    CHECK(tape.grad(x).item() == 0.25);
  }
  {
    // Unreached leaves get zero; a non-scalar loss is rejected.
    Tape tape;
    Var x = tape.leaf(Tensor({2}, 1.0).set_requires_grad(true));
    Var unused = tape.leaf(Tensor({3}, 1.0).set_requires_grad(true));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
    tape.backward(sum(x));
    CHECK(tape.grad(unused) == Tensor({3}));
    CHECK_THROWS(tape.backward(sum(x)));
  }
}

TEST_CASE("backward accumulates over paths, exactly") {
  std::mt19937_64 rng(5);
  const Tensor v = random_tensor({6}, rng);
  Tape t1, t2, t3;
  Var a = t1.leaf(Tensor(v).set_requires_grad(true));
  t1.backward(add(sum(mul(a, a)), sum(scale(a, 3.0))));
  Var b = t2.leaf(Tensor(v).set_requires_grad(true));
  t2.backward(sum(mul(b, b)));
  Var c = t3.leaf(Tensor(v).set_requires_grad(true));
  t3.backward(sum(scale(c, 3.0)));
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(t1.grad(a)[i] == t2.grad(b)[i] + t3.grad(c)[i]);

  // Parameters used twice get both contributions.
  Parameter p("p", Tensor({2}, {1.0, -2.0}));
  Tape t4;
  Var pv = t4.param(p);
  t4.backward(add(sum(pv), sum(scale(pv, 2.0))));
  CHECK(p.grad.to_vector() == std::vector<double>{3.0, 3.0});
}

TEST_CASE("finite_diff_check basics") {
  std::mt19937_64 rng(1);
  const ScalarFn squares = [](Tape&, Var x) { return sum(mul(x, x)); };
  CHECK(finite_diff_check(squares, random_tensor({5}, rng)) < 1e-8);
  CHECK_THROWS_AS(finite_diff_check(squares, random_tensor({5}, rng), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(finite_diff_check(squares, Tensor({2}, {1.0, std::numeric_limits<double>::infinity()})),
                  std::domain_error);
}

// Every primitive against central differences, over ten seeds.
TEST_CASE("primitive gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor w4 = random_tensor({2, 3, 5, 4}, rng);
    auto probe = [&w4](Var y) {
      Tape& t = y.tape();
      Tensor w(y.shape());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = w4[i % w4.size()] + 0.1 * double(i % 7);
      return sum(mul(y, t.constant(w)));
    };
    const Tensor x = random_tensor({2, 3, 5, 4}, rng);
    const Tensor other = random_tensor({2, 3, 5, 4}, rng);
    const Tensor w = random_tensor({4, 3}, rng);
    const Tensor kernel = random_tensor({4, 3, 3}, rng);
    const Tensor mix = random_tensor({4, 6}, rng);
    const Tensor amat = random_tensor({2, 4, 4}, rng);
    const Tensor pos_x = [&] {
      Tensor t = x;
      for (double& v : t.data()) v = std::abs(v) + 0.5;
      return t;
    }();
    const double tol = 1e-4;
    CAPTURE(seed);

    CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(add(v, t.constant(other))); }, x) < tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(sub(t.constant(other), v)); }, x) < tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(mul(v, t.constant(other))); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(scale(v, -1.7)); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(relu(v)); }, x, 1e-6) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(sigmoid(v)); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(absolute(v)); }, x, 1e-6) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return mean(mul(v, v)); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(mean_over(v, {1, 3})); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(reshape(v, {6, 20})); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(permute(v, {0, 2, 3, 1})); }, x) < tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(concat({v, t.constant(other), v}, 2)); }, x) < tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(matmul(reshape(v, {30, 4}), t.constant(mix))); }, x) <
          tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(matmul(t.constant(mix.reshaped({6, 4})), reshape(v, {4, 30}))); }, x) < tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(channel_affine(v, t.constant(w), t.constant(Tensor({4}, 0.3)))); }, x) < tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(channel_affine(t.constant(x), v)); }, w) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(mix_last(v, mix)); }, x) < tol);
    for (bool tr : {false, true}) {
      CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(batched_mix_last(v, t.constant(amat), tr)); }, x) < tol);
      CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(batched_mix_last(t.constant(x), v, tr)); }, amat) < tol);
    }
    for (std::size_t stride : {1, 2}) {
      CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(conv_time(v, t.constant(kernel), t.constant(Tensor({4}, 0.2)), stride)); }, x) < tol);
      CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(conv_time(t.constant(x), v, std::nullopt, stride)); }, kernel) < tol);
    }
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(interp_time(v, 9)); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(interp_time(v, 3)); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) {
            std::mt19937_64 mask(seed);
            return probe(dropout(v, 0.3, mask));
          }, x) < tol);
    for (bool training : {true, false}) {
      Tensor rm({3}, 0.1), rv({3}, 2.0);
      BatchNormState st{&rm, &rv, 0.1, 1e-5, training};
      const Tensor gamma = random_tensor({3}, rng), beta = random_tensor({3}, rng);
      CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(batch_norm(v, t.constant(gamma), t.constant(beta), st)); }, x) < tol);
      CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(batch_norm(t.constant(x), v, t.constant(beta), st)); }, gamma) < tol);
      CHECK(finite_diff_check([&](Tape& t, Var v) { return probe(batch_norm(t.constant(x), t.constant(gamma), v, st)); }, beta) < tol);
    }
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(l2_norm_last(v)); }, x) < tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return probe(time_diff(v, 2, 2)); }, x) < tol);
  }
}

TEST_CASE("conv_time matches a direct summation loop") {
  std::mt19937_64 rng(11);
  const std::size_t B = 2, C = 3, T = 7, N = 2, O = 4, K = 5;
  const Tensor x = random_tensor({B, C, T, N}, rng), w = random_tensor({O, C, K}, rng), bias = random_tensor({O}, rng);
  for (std::size_t stride : {1, 2, 3}) {
    Tape tape;
    const Tensor y = conv_time(tape.constant(x), tape.constant(w), tape.constant(bias), stride).value();
    const std::size_t Tout = (T + stride - 1) / stride;
    REQUIRE(y.shape() == Shape{B, O, Tout, N});
    double worst = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t t = 0; t < Tout; ++t)
          for (std::size_t n = 0; n < N; ++n) {
            double ref = bias[o];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t k = 0; k < K; ++k) {
                const long src = long(t * stride + k) - long(K / 2);
                if (src >= 0 && src < long(T)) ref += w.at({o, c, k}) * x.at({b, c, std::size_t(src), n});
              }
            worst = std::max(worst, std::abs(ref - y.at({b, o, t, n})));
          }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("batch norm statistics") {
  Tape tape;
  Tensor rm({1}, 0.0), rv({1}, 1.0);
  // One channel, values 1..4: mean 2.5, biased variance 1.25, unbiased 5/3.
  Var x = tape.constant(Tensor({1, 1, 4}, {1, 2, 3, 4}));
  BatchNormState st{&rm, &rv, 0.1, 0.0, true};
  const Tensor y = batch_norm(x, tape.constant(Tensor({1}, 1.0)), tape.constant(Tensor({1}, 0.0)), st).value();
  CHECK(y[0] == doctest::Approx(-1.5 / std::sqrt(1.25)).epsilon(1e-14));
  CHECK(rm[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0).epsilon(1e-15));
  // Inference uses the running statistics.
  BatchNormState eval{&rm, &rv, 0.1, 0.0, false};
  const Tensor z = batch_norm(x, tape.constant(Tensor({1}, 2.0)), tape.constant(Tensor({1}, 1.0)), eval).value();
  CHECK(z[3] == doctest::Approx(2.0 * (4.0 - 0.25) / std::sqrt(rv[0]) + 1.0).epsilon(1e-14));
}

TEST_CASE("dropout is inverted and seeded") {
  Tape tape;
  Var x = tape.constant(Tensor({10000}, 1.0));
  std::mt19937_64 r1(3), r2(3);
  const Tensor a = dropout(x, 0.3, r1).value();
  CHECK(a == dropout(x, 0.3, r2).value());
  std::size_t zeros = 0;
  for (double v : a.data()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.7)));
    zeros += v == 0.0;
  }
  CHECK(zeros > 2800);
  CHECK(zeros < 3200);
  CHECK_THROWS(dropout(x, 1.0, r1));
}

TEST_CASE("repeated tapes are bitwise deterministic") {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({2, 3, 6, 4}, rng), w = random_tensor({3, 3, 3}, rng);
  auto run = [&] {
    Tape tape;
    Var v = tape.leaf(Tensor(x).set_requires_grad(true));
    Var y = sigmoid(conv_time(v, tape.constant(w), std::nullopt, 1));
    Var loss = mean(mul(y, y));
    tape.backward(loss);
    return std::make_pair(loss.value(), tape.grad(v));
  };
  CHECK(run() == run());
}

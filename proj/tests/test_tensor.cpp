#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "pixeldit/errors.hpp"
#include "pixeldit/grad_check.hpp"
#include "pixeldit/ops.hpp"

using namespace pixeldit;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Weighted sum so that every output coordinate contributes a distinct slope.
Var weighted_sum(Tape& tape, const Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t l = 0; l < k; ++l) s += static_cast<long double>(a[i * k + l]) * b[l * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

}  // namespace

TEST_CASE("tensor rejects inconsistent construction") {
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t(Shape{2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.dim(-1) == 3);
  t[4] = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.require_finite("probe"), NumericError);
}

TEST_CASE("matmul identity and hand case") {
  Tape tape;
  auto eye = tape.constant(Tensor(Shape{2, 2}, {1, 0, 0, 1}));
  auto m = tape.constant(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  CHECK(bitwise_equal(matmul(eye, m).value(), m.value()));
  auto r = matmul(tape.constant(Tensor(Shape{1, 2}, {1, 2})), tape.constant(Tensor(Shape{2, 1}, {3, 4})));
  CHECK(r.value().item() == 11.0);
}

TEST_CASE("matmul shape errors name both shapes") {
  Tape tape;
  auto a = tape.constant(Tensor(Shape{2, 3}));
  auto b = tape.constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("matmul matches naive oracle, batched and broadcast") {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng);
  Tape tape;
  auto c = matmul(tape.constant(a), tape.constant(b));
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor ai(Shape{3, 4}, std::vector<double>(a.data() + i * 12, a.data() + (i + 1) * 12));
    Tensor ref = naive_matmul(ai, b);
    for (std::size_t j = 0; j < 15; ++j) CHECK(c.value()[i * 15 + j] == doctest::Approx(ref[j]).epsilon(1e-13));
  }
  Tensor bb = random_tensor({1, 4, 2}, rng);
  auto d = matmul(tape.constant(a), tape.constant(bb));
  CHECK(d.shape() == Shape{2, 3, 2});
}

TEST_CASE("matmul gradient vs finite differences") {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto rep = grad_check([&](Tape& t, const Var& x) { return sum(matmul(x, t.constant(b))); }, a, 1e-4);
  CHECK(rep.max_rel_error <= 1e-6);
  auto rep_b = grad_check([&](Tape& t, const Var& x) { return weighted_sum(t, matmul(t.constant(a), x)); }, b, 1e-4);
  CHECK(rep_b.max_rel_error <= 1e-6);
  Tensor a3 = random_tensor({2, 3, 4}, rng), b3 = random_tensor({2, 4, 2}, rng);
  auto rep3 = grad_check([&](Tape& t, const Var& x) { return weighted_sum(t, matmul(x, t.constant(b3))); }, a3, 1e-4);
  CHECK(rep3.max_rel_error <= 1e-6);
}

TEST_CASE("elementwise values") {
  Tape tape;
  auto x = tape.constant(Tensor::from({0.0, 1.0}));
  auto s = silu(x);
  CHECK(s.value()[0] == 0.0);
  CHECK(s.value()[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
  auto a = add(tape.constant(Tensor::from({1, 2})), tape.constant(Tensor::from({3, 4})));
  CHECK(a.value()[0] == 4.0);
  CHECK(a.value()[1] == 6.0);
  CHECK_THROWS_AS(add(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2}))), DimensionError);
  auto g = gelu_tanh(tape.constant(Tensor::from({0.5})));
  const double k = std::sqrt(2.0 / M_PI);
  CHECK(g.value()[0] == doctest::Approx(0.25 * (1 + std::tanh(k * (0.5 + 0.044715 * 0.125)))).epsilon(1e-15));
}

TEST_CASE("softmax cases") {
  Tape tape;
  auto u = softmax_lastdim(tape.constant(Tensor::from({0, 0, 0})));
  for (double v : u.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  auto big = softmax_lastdim(tape.constant(Tensor::from({1000, 1000})));
  CHECK(big.value()[0] == 0.5);
  CHECK(big.value()[1] == 0.5);
  auto r = softmax_lastdim(tape.constant(Tensor::from({1, 2, 3})));
  long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) {
    CHECK(r.value()[static_cast<std::size_t>(i)] ==
          doctest::Approx(static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z)).epsilon(1e-14));
  }
}

TEST_CASE("softmax rows sum to one on random inputs") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    auto y = softmax_lastdim(tape.constant(random_tensor({4, 7}, rng, 20.0)));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double v = y.value()[r * 7 + j];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("grad_check closed forms") {
  auto rep = grad_check([](Tape&, const Var& x) { return sum(square(x)); }, Tensor::from({2}), 1e-5);
  CHECK(rep.worst_analytic == 4.0);
  CHECK(rep.max_rel_error <= 1e-7);
  std::mt19937_64 rng(5);
  auto lin = grad_check([](Tape&, const Var& x) { return sum(x); }, random_tensor({3, 3}, rng), 1e-3);
  CHECK(lin.max_rel_error <= 1e-9);
  CHECK_THROWS_AS(grad_check([](Tape&, const Var& x) { return sum(x); }, Tensor::from({1}), 0.0), InputError);
  // exp(800) overflows, so the analytic gradient is infinite
  CHECK_THROWS_AS(grad_check([](Tape&, const Var& x) { return sum(pixeldit::exp(x)); }, Tensor::from({800}), 1e-3),
                  NumericError);
}

TEST_CASE("shared subexpressions accumulate") {
  Parameter p("x", Tensor::from({3.0}));
  Tape tape;
  auto x = tape.param(p);
  tape.backward(add(x, x));
  CHECK(p.grad[0] == 2.0);
}

TEST_CASE("reshape and permute are bijections") {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({2, 3, 4, 5}, rng);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::size_t> inv(4);
  for (std::size_t i = 0; i < 4; ++i) inv[perm[i]] = i;
  Tensor y = permute_tensor(x, perm);
  CHECK(y.shape() == Shape{4, 2, 5, 3});
  CHECK(y.at({1, 0, 2, 2}) == x.at({0, 2, 1, 2}));
  CHECK(bitwise_equal(permute_tensor(y, inv), x));
  Tape tape;
  auto r = reshape(reshape(tape.constant(x), {6, 20}), x.shape());
  CHECK(bitwise_equal(r.value(), x));
  CHECK_THROWS_AS(reshape(tape.constant(x), {7, 20}), DimensionError);
}

TEST_CASE("every primitive passes grad_check on random small shapes") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> ext(1, 5);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d0 = ext(rng), d1 = ext(rng), d2 = ext(rng);
    const Tensor x = random_tensor({d0, d1, d2}, rng);
    const Tensor other = random_tensor({d0, d1, d2}, rng);
    const Tensor row = random_tensor({d2}, rng);
    const Tensor w = random_tensor({d2, d1}, rng);
    const Tensor bias = random_tensor({d1}, rng);
    const Tensor table = random_tensor({4, d2}, rng);
    const Tensor gain = random_tensor({d2}, rng);
    std::vector<int> ids{3, 0, 3};

    std::vector<std::pair<const char*, ScalarFn>> cases = {
        {"add", [&](Tape& t, const Var& v) { return weighted_sum(t, add(v, t.constant(row))); }},
        {"add_rhs", [&](Tape& t, const Var& v) { return weighted_sum(t, add(t.constant(other), reshape(v, x.shape()))); }},
        {"sub", [&](Tape& t, const Var& v) { return weighted_sum(t, sub(t.constant(row), v)); }},
        {"mul", [&](Tape& t, const Var& v) { return weighted_sum(t, mul(v, t.constant(other))); }},
        {"mul_self", [&](Tape& t, const Var& v) { return weighted_sum(t, mul(v, v)); }},
        {"scale", [&](Tape& t, const Var& v) { return weighted_sum(t, scale(v, -1.7)); }},
        {"add_scalar", [&](Tape& t, const Var& v) { return weighted_sum(t, add_scalar(v, 0.3)); }},
        {"square", [&](Tape& t, const Var& v) { return weighted_sum(t, square(v)); }},
        {"exp", [&](Tape& t, const Var& v) { return weighted_sum(t, pixeldit::exp(v)); }},
        {"silu", [&](Tape& t, const Var& v) { return weighted_sum(t, silu(v)); }},
        {"gelu", [&](Tape& t, const Var& v) { return weighted_sum(t, gelu_tanh(v)); }},
        {"linear", [&](Tape& t, const Var& v) { return weighted_sum(t, linear(v, t.constant(w), t.constant(bias))); }},
        {"softmax", [&](Tape& t, const Var& v) { return weighted_sum(t, softmax_lastdim(v)); }},
        {"permute", [&](Tape& t, const Var& v) { return weighted_sum(t, permute(v, {2, 0, 1})); }},
        {"slice", [&](Tape& t, const Var& v) { return weighted_sum(t, slice_lastdim(v, d2 / 2, d2 - d2 / 2)); }},
        {"mean", [&](Tape&, const Var& v) { return mean(square(v)); }},
        {"rms_norm", [&](Tape& t, const Var& v) { return weighted_sum(t, rms_norm(v, t.constant(gain))); }},
        {"cosine", [&](Tape& t, const Var& v) { return weighted_sum(t, cosine_similarity_lastdim(v, t.constant(other))); }},
    };
    for (auto& [name, f] : cases) {
      CAPTURE(name);
      CAPTURE(shape_string(x.shape()));
      CHECK(grad_check(f, x, 1e-5).max_rel_error <= 1e-4);
    }
    CHECK(grad_check([&](Tape& t, const Var& v) { return weighted_sum(t, broadcast_to(v, {d0, d1, d2})); }, row, 1e-5)
              .max_rel_error <= 1e-4);
    CHECK(grad_check([&](Tape& t, const Var& v) { return weighted_sum(t, gather_rows(v, ids)); }, table, 1e-5)
              .max_rel_error <= 1e-4);
    CHECK(grad_check([&](Tape& t, const Var& v) { return weighted_sum(t, rms_norm(t.constant(x), v)); }, gain, 1e-5)
              .max_rel_error <= 1e-4);
    const Tensor q = random_tensor({2, 6, 2, 8}, rng);
    CHECK(grad_check([&](Tape& t, const Var& v) { return weighted_sum(t, rope_2d(v, {2, 3})); }, q, 1e-5)
              .max_rel_error <= 1e-4);
  }
}

TEST_CASE("gather_rows rejects out-of-range ids") {
  Tape tape;
  auto t = tape.constant(Tensor(Shape{3, 2}));
  std::vector<int> bad{3};
  CHECK_THROWS_AS(gather_rows(t, bad), InputError);
}

TEST_CASE("cosine similarity zero-norm rows") {
  Tape tape;
  std::size_t zeros = 0;
  auto c = cosine_similarity_lastdim(tape.constant(Tensor(Shape{2, 2}, {0, 0, 1, 0})),
                                     tape.constant(Tensor(Shape{2, 2}, {1, 1, -1, 0})), &zeros);
  CHECK(c.value()[0] == 0.0);
  CHECK(c.value()[1] == -1.0);
  CHECK(zeros == 1);
}

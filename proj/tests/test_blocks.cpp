#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "pixeldit/blocks.hpp"
#include "pixeldit/errors.hpp"
#include "pixeldit/grad_check.hpp"
#include "test_util.hpp"

using namespace pixeldit;
using testutil::random_tensor;
using testutil::weighted_sum;

namespace {

// Rotary oracle for a single head vector at grid position (r, c).
std::vector<double> rope_oracle(const std::vector<double>& v, double r, double c) {
  const std::size_t hd = v.size(), quarter = hd / 4;
  std::vector<double> out(hd);
  for (std::size_t j = 0; j < hd / 2; ++j) {
    const bool row_pair = j < quarter;
    const double i = static_cast<double>(row_pair ? j : j - quarter);
    const double angle = (row_pair ? r : c) * std::pow(10000.0, -i / static_cast<double>(quarter));
    out[2 * j] = v[2 * j] * std::cos(angle) - v[2 * j + 1] * std::sin(angle);
    out[2 * j + 1] = v[2 * j] * std::sin(angle) + v[2 * j + 1] * std::cos(angle);
  }
  return out;
}

// Per-head loop attention on x [T, D] with weights stored [in, out].
std::vector<double> attention_oracle(const Tensor& x, const AttentionParams& p, const AttentionConfig& cfg) {
  const std::size_t t = x.dim(1), d = x.dim(2), hd = cfg.head_dim;
  const Tensor& wqkv = p.qkv.weight->value;
  const Tensor& bqkv = p.qkv.bias->value;
  std::vector<double> q(t * d), k(t * d), v(t * d);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t o = 0; o < 3 * d; ++o) {
      double s = bqkv[o];
      for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * wqkv[j * 3 * d + o];
      (o < d ? q[i * d + o] : o < 2 * d ? k[i * d + o - d] : v[i * d + o - 2 * d]) = s;
    }
  if (cfg.rope_enabled) {
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        const double r = static_cast<double>(i / cfg.grid.cols), c = static_cast<double>(i % cfg.grid.cols);
        std::vector<double> qs(q.begin() + i * d + h * hd, q.begin() + i * d + (h + 1) * hd);
        std::vector<double> ks(k.begin() + i * d + h * hd, k.begin() + i * d + (h + 1) * hd);
        auto qr = rope_oracle(qs, r, c), kr = rope_oracle(ks, r, c);
        std::copy(qr.begin(), qr.end(), q.begin() + i * d + h * hd);
        std::copy(kr.begin(), kr.end(), k.begin() + i * d + h * hd);
      }
  }
  std::vector<double> mixed(t * d, 0.0);
  for (std::size_t h = 0; h < cfg.heads; ++h)
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> w(t);
      double mx = -1e300;
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0;
        for (std::size_t e = 0; e < hd; ++e) s += q[i * d + h * hd + e] * k[j * d + h * hd + e];
        w[j] = s / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, w[j]);
      }
      double z = 0;
      for (auto& e : w) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t e = 0; e < hd; ++e) mixed[i * d + h * hd + e] += w[j] / z * v[j * d + h * hd + e];
    }
  std::vector<double> out(t * d);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t o = 0; o < d; ++o) {
      double s = p.proj.bias->value[o];
      for (std::size_t j = 0; j < d; ++j) s += mixed[i * d + j] * p.proj.weight->value[j * d + o];
      out[i * d + o] = s;
    }
  return out;
}

GradCheckReport check_params(ParameterSet& ps, const ParamLossFn& f, double step = 1e-4) {
  auto all = ps.all();
  return grad_check_parameters(f, all, step);
}

}  // namespace

TEST_CASE("rms_norm examples") {
  Tape tape;
  auto ones = rms_norm(tape.constant(Tensor::from({1, 1, 1, 1})), tape.constant(Tensor(Shape{4}, 1.0)));
  for (double v : ones.value().values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  auto twos = rms_norm(tape.constant(Tensor::from({2, 2})), tape.constant(Tensor(Shape{2}, 1.0)));
  for (double v : twos.value().values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  auto r = rms_norm(tape.constant(Tensor::from({1, 2, 3})), tape.constant(Tensor(Shape{3}, 1.0)));
  const double denom = std::sqrt(14.0 / 3.0 + 1e-6);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.value()[i] == doctest::Approx((i + 1) / denom).epsilon(1e-15));
}

TEST_CASE("rope_2d properties") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({1, 16, 2, 8}, rng);
  Tape tape;
  auto y = rope_2d(tape.constant(x), {4, 4});
  for (std::size_t e = 0; e < 16; ++e) CHECK(y.value()[e] == x[e]);  // token (0,0), both heads
  for (std::size_t tok = 0; tok < 16; ++tok)
    for (std::size_t h = 0; h < 2; ++h) {
      double a = 0, b = 0;
      for (std::size_t e = 0; e < 8; ++e) {
        const std::size_t i = (tok * 2 + h) * 8 + e;
        a += x[i] * x[i];
        b += y.value()[i] * y.value()[i];
        std::vector<double> src(x.data() + (tok * 2 + h) * 8, x.data() + (tok * 2 + h + 1) * 8);
        CHECK(y.value()[i] == doctest::Approx(rope_oracle(src, tok / 4, tok % 4)[e]).epsilon(1e-13));
      }
      CHECK(std::abs(std::sqrt(a) - std::sqrt(b)) <= 1e-12);
    }
  CHECK_THROWS_AS(rope_2d(tape.constant(x), {3, 4}), DimensionError);
  CHECK_THROWS_AS(rope_2d(tape.constant(Tensor(Shape{1, 4, 1, 6})), {2, 2}), DimensionError);
}

TEST_CASE("rope_2d logits depend only on relative offsets") {
  for (std::size_t side : {3u, 4u}) {
    std::mt19937_64 rng(side);
    const std::size_t t = side * side, hd = 8;
    const Tensor q = random_tensor({1, t, 1, hd}, rng);
    // the same q and k vectors placed at every grid cell
    Tensor qs(Shape{1, t, 1, hd}), ks(Shape{1, t, 1, hd});
    const Tensor kv = random_tensor({hd}, rng);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t e = 0; e < hd; ++e) {
        qs[i * hd + e] = q[e];
        ks[i * hd + e] = kv[e];
      }
    Tape tape;
    const Tensor rq = rope_2d(tape.constant(qs), {side, side}).value();
    const Tensor rk = rope_2d(tape.constant(ks), {side, side}).value();
    auto logit = [&](std::size_t a, std::size_t b) {
      double s = 0;
      for (std::size_t e = 0; e < hd; ++e) s += rq[a * hd + e] * rk[b * hd + e];
      return s;
    };
    for (std::size_t r1 = 0; r1 < side; ++r1)
      for (std::size_t c1 = 0; c1 < side; ++c1)
        for (std::size_t r2 = 0; r2 < side; ++r2)
          for (std::size_t c2 = 0; c2 < side; ++c2) {
            // translate both positions by one cell down and one cell right when possible
            if (r1 + 1 >= side || r2 + 1 >= side || c1 + 1 >= side || c2 + 1 >= side) continue;
            const double base = logit(r1 * side + c1, r2 * side + c2);
            CHECK(logit((r1 + 1) * side + c1, (r2 + 1) * side + c2) == doctest::Approx(base).epsilon(1e-12));
            CHECK(logit(r1 * side + c1 + 1, r2 * side + c2 + 1) == doctest::Approx(base).epsilon(1e-12));
          }
  }
}

TEST_CASE("attention matches the per-head loop oracle") {
  for (bool rope : {false, true}) {
    CAPTURE(rope);
    const std::size_t d = rope ? 8 : 4;
    ParameterSet ps;
    Rng rng(21);
    auto p = make_attention(ps, "attn", d, rng);
    testutil::randomize(ps, 5, 0.5);
    auto cfg = AttentionConfig::for_width(d, 2, rope, {1, 3});
    std::mt19937_64 data_rng(8);
    const Tensor x = random_tensor({1, 3, d}, data_rng);
    Tape tape;
    auto y = multi_head_attention(tape, tape.constant(x), p, cfg);
    auto ref = attention_oracle(x, p, cfg);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.value()[i] - ref[i]) <= 1e-10);
  }
}

TEST_CASE("attention degenerate cases") {
  ParameterSet ps;
  Rng rng(1);
  auto p = make_attention(ps, "attn", 8, rng);
  testutil::randomize(ps, 2, 0.5);
  auto cfg = AttentionConfig::for_width(8, 2, true, {1, 1});
  std::mt19937_64 data_rng(4);
  const Tensor x = random_tensor({2, 1, 8}, data_rng);
  Tape tape;
  auto y = multi_head_attention(tape, tape.constant(x), p, cfg);
  // T = 1: proj(v)
  auto v = slice_lastdim(p.qkv(tape, tape.constant(x)), 16, 8);
  auto ref = p.proj(tape, v);
  for (std::size_t i = 0; i < 16; ++i) CHECK(y.value()[i] == doctest::Approx(ref.value()[i]).epsilon(1e-14));
  // zero V weights and bias -> output equals the projection bias
  for (std::size_t j = 0; j < 8; ++j) {
    for (std::size_t o = 16; o < 24; ++o) p.qkv.weight->value[j * 24 + o] = 0.0;
  }
  for (std::size_t o = 16; o < 24; ++o) p.qkv.bias->value[o] = 0.0;
  auto cfg3 = AttentionConfig::for_width(8, 2, true, {1, 3});
  const Tensor x3 = random_tensor({1, 3, 8}, data_rng);
  Tape t2;
  auto z = multi_head_attention(t2, t2.constant(x3), p, cfg3);
  for (std::size_t i = 0; i < 24; ++i) CHECK(z.value()[i] == doctest::Approx(p.proj.bias->value[i % 8]).epsilon(1e-14));
  CHECK_THROWS_AS(AttentionConfig::for_width(10, 3, false, {}), ConfigError);
  CHECK_THROWS_AS(multi_head_attention(t2, t2.constant(Tensor(Shape{1, 3, 4})), p, cfg3), DimensionError);
}

TEST_CASE("mlp cases") {
  CHECK(mlp_hidden_width(3, 4.0) == 12);
  ParameterSet ps;
  Rng rng(0);
  auto m = make_mlp(ps, "mlp", 3, 4.0, rng);
  CHECK(m.fc1.out() == 12);
  std::mt19937_64 data_rng(2);
  const Tensor x = random_tensor({2, 3}, data_rng);
  testutil::randomize(ps, 9, 0.7);
  Tape tape;
  auto y = mlp(tape, tape.constant(x), m);
  // two-matmul oracle
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = m.fc2.bias->value[o];
      for (std::size_t h = 0; h < 12; ++h) {
        double z = m.fc1.bias->value[h];
        for (std::size_t i = 0; i < 3; ++i) z += x[r * 3 + i] * m.fc1.weight->value[i * 12 + h];
        const double g = 0.5 * z * (1 + std::tanh(std::sqrt(2 / M_PI) * (z + 0.044715 * z * z * z)));
        acc += g * m.fc2.weight->value[h * 3 + o];
      }
      CHECK(y.value()[r * 3 + o] == doctest::Approx(acc).epsilon(1e-13));
    }
  m.fc1.weight->value.fill(0.0);
  m.fc2.weight->value.fill(0.0);
  Tape t2;
  auto b = mlp(t2, t2.constant(x), m);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t o = 0; o < 3; ++o) CHECK(b.value()[r * 3 + o] == m.fc2.bias->value[o]);
}

TEST_CASE("adaln_modulate cases") {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({2, 4, 3}, rng);
  const Tensor beta = random_tensor({2, 1, 3}, rng);
  Tape tape;
  auto id = adaln_modulate(tape.constant(x), tape.constant(Tensor(Shape{3}, 1.0)), tape.constant(Tensor(Shape{3})));
  CHECK(bitwise_equal(id.value(), x));
  auto b = adaln_modulate(tape.constant(x), tape.constant(Tensor(Shape{1}, 0.0)), tape.constant(beta));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t c = 0; c < 3; ++c) CHECK(b.value()[(i * 4 + l) * 3 + c] == beta[i * 3 + c]);
  // pixel-wise gamma that varies over the 4 rows differs from one shared row
  Tensor gp = random_tensor({1, 4, 3}, rng);
  Tensor gshared(Shape{1, 1, 3}, std::vector<double>(gp.data(), gp.data() + 3));
  auto pix = adaln_modulate(tape.constant(x), tape.constant(gp), tape.constant(beta));
  auto patch = adaln_modulate(tape.constant(x), tape.constant(gshared), tape.constant(beta));
  CHECK(max_abs_diff(pix.value(), patch.value()) > 1e-3);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) gp[r * 3 + c] = gp[c];
  auto equal = adaln_modulate(tape.constant(x), tape.constant(gp), tape.constant(beta));
  CHECK(bitwise_equal(equal.value(), patch.value()));
  CHECK_THROWS_AS(adaln_modulate(tape.constant(x), tape.constant(Tensor(Shape{2})), tape.constant(beta)), DimensionError);
}

TEST_CASE("dit block: identity at init, determinism and gradients") {
  ParameterSet ps;
  Rng rng(3);
  auto block = make_dit_block(ps, "dit.0", 8, 4.0, rng);
  auto cfg = AttentionConfig::for_width(8, 2, true, {2, 2});
  std::mt19937_64 data_rng(1);
  const Tensor s = random_tensor({2, 4, 8}, data_rng);
  const Tensor c = random_tensor({2, 1, 8}, data_rng);
  {
    Tape tape;
    CHECK(bitwise_equal(dit_block(tape, tape.constant(s), tape.constant(c), block, cfg).value(), s));
  }
  testutil::randomize(ps, 17, 0.4);
  Tensor s2 = s, c2 = c;
  for (std::size_t i = 0; i < 32; ++i) s2[32 + i] = s2[i];
  for (std::size_t i = 0; i < 8; ++i) c2[8 + i] = c2[i];
  {
    Tape tape;
    auto y = dit_block(tape, tape.constant(s2), tape.constant(c2), block, cfg).value();
    CHECK(std::memcmp(y.data(), y.data() + 32, 32 * sizeof(double)) == 0);
  }
  auto rep = check_params(ps, [&](Tape& t) {
    return sum(dit_block(t, t.constant(s), t.constant(c), block, cfg));
  });
  CAPTURE(rep.worst);
  CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("stack of zero-gated blocks is the identity") {
  ParameterSet ps;
  Rng rng(4);
  std::vector<DitBlockParams> blocks;
  for (int i = 0; i < 5; ++i) blocks.push_back(make_dit_block(ps, "dit." + std::to_string(i), 8, 4.0, rng));
  auto cfg = AttentionConfig::for_width(8, 2, true, {2, 3});
  std::mt19937_64 data_rng(2);
  const Tensor s0 = random_tensor({3, 6, 8}, data_rng);
  const Tensor c = random_tensor({3, 1, 8}, data_rng);
  Tape tape;
  Var s = tape.constant(s0);
  for (const auto& b : blocks) s = dit_block(tape, s, tape.constant(c), b, cfg);
  CHECK(bitwise_equal(s.value(), s0));
}

TEST_CASE("pixel adaln parameter layout") {
  ParameterSet ps;
  Rng rng(0);
  PitGeometry g;
  g.patch_area = 4;
  g.pixel_width = 3;
  g.width = 5;
  auto phi = make_linear(ps, "phi", 5, g.modulation_rows() * 6 * 3, true, Init::zero, rng);
  CHECK(phi.out() == 72);
  std::mt19937_64 data_rng(3);
  const Tensor cond = random_tensor({2, 5}, data_rng);
  Tape tape;
  auto m = pixel_adaln_params(tape, tape.constant(cond), phi, g);
  for (const Var* v : {&m.beta1, &m.gamma1, &m.alpha1, &m.beta2, &m.gamma2, &m.alpha2}) {
    CHECK(v->shape() == Shape{2, 4, 3});
    for (double e : v->value().values()) CHECK(e == 0.0);
  }
  // group order: bias entries 0..71 laid out [pixel, group, channel]
  for (std::size_t i = 0; i < 72; ++i) phi.bias->value[i] = static_cast<double>(i);
  Tape t2;
  auto m2 = pixel_adaln_params(t2, t2.constant(cond), phi, g);
  CHECK(m2.beta1.value().at({0, 1, 2}) == 18 + 2);
  CHECK(m2.gamma1.value().at({0, 0, 0}) == 3);
  CHECK(m2.alpha2.value().at({1, 3, 1}) == 3 * 18 + 15 + 1);
  PitGeometry wrong = g;
  wrong.pixel_width = 2;
  CHECK_THROWS_AS(pixel_adaln_params(t2, t2.constant(cond), phi, wrong), ConfigError);
}

namespace {

struct PitFixture {
  ParameterSet ps;
  PitGeometry g;
  PitBlockParams block;
  AttentionConfig cfg;
  Tensor x, cond;

  explicit PitFixture(PixelModulation mod, std::size_t compaction = 1, bool attention = true) {
    g.patch_area = 4;
    g.pixel_width = 4;
    g.width = 8;
    g.modulation = mod;
    g.compaction = compaction;
    g.attention = attention;
    Rng rng(12);
    block = make_pit_block(ps, "pit.0", g, rng);
    cfg = AttentionConfig::for_width(8, 2, true, {2, 2 * compaction});
    std::mt19937_64 data_rng(5);
    x = random_tensor({2 * 4, 4, 4}, data_rng);
    cond = random_tensor({2, 4, 8}, data_rng);
  }

  Tensor run(std::size_t* seq = nullptr) {
    Tape tape;
    return pit_block(tape, tape.constant(x), tape.constant(cond), block, g, cfg, seq).value();
  }
};

}  // namespace

TEST_CASE("pit block identity at init and attention length") {
  for (std::size_t k : {1u, 2u, 4u}) {
    PitFixture f(PixelModulation::pixelwise, k);
    std::size_t seq = 0;
    CHECK(bitwise_equal(f.run(&seq), f.x));
    CHECK(seq == 4 * k);
  }
}

TEST_CASE("pit block gradients") {
  for (auto mod : {PixelModulation::pixelwise, PixelModulation::patchwise}) {
    for (bool attention : {true, false}) {
      PitFixture f(mod, 1, attention);
      testutil::randomize(f.ps, 31, 0.4);
      auto rep = check_params(f.ps, [&](Tape& t) {
        return weighted_sum(t, pit_block(t, t.constant(f.x), t.constant(f.cond), f.block, f.g, f.cfg));
      });
      CAPTURE(rep.worst);
      CHECK(rep.max_rel_error <= 1e-4);
    }
  }
}

TEST_CASE("pixel-wise modulation with duplicated rows equals patch-wise") {
  PitFixture pix(PixelModulation::pixelwise);
  PitFixture patch(PixelModulation::patchwise);
  testutil::randomize(patch.ps, 41, 0.4);
  for (Parameter* p : patch.ps.all()) {
    Parameter& q = pix.ps.get(p->name);
    if (p->name.starts_with("pit.0.phi")) continue;
    q.value = p->value;
  }
  // replicate the 6 * D_pix columns of the patch-wise head for each of the p^2 rows
  const Tensor& w = patch.block.phi.weight->value;
  const Tensor& b = patch.block.phi.bias->value;
  const std::size_t group = 6 * 4;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < group; ++j) {
      pix.block.phi.bias->value[r * group + j] = b[j];
      for (std::size_t i = 0; i < 8; ++i) pix.block.phi.weight->value[i * 4 * group + r * group + j] = w[i * group + j];
    }
  CHECK(max_abs_diff(pix.run(), patch.run()) <= 1e-12);
}

#include <cmath>
#include <vector>

#include "doctest.h"
#include "pixeldit/errors.hpp"
#include "pixeldit/grad_check.hpp"
#include "pixeldit/model.hpp"
#include "test_util.hpp"

using namespace pixeldit;
using testutil::random_tensor;
using testutil::weighted_sum;

namespace {

ModelConfig toy(Variant v = Variant::pixelwise) {
  ModelConfig c;
  c.depth_patch = 2;
  c.depth_pixel = 2;
  c.hidden = 16;
  c.pixel_hidden = 4;
  c.patch = 2;
  c.heads = 2;
  c.num_classes = 5;
  c.height = c.width = 8;
  c.variant = v;
  return c;
}

}  // namespace

TEST_CASE("presets follow the published table") {
  auto b = preset("B"), l = preset("L"), xl = preset("XL");
  CHECK(b.depth_patch == 12);
  CHECK(b.depth_pixel == 2);
  CHECK(b.hidden == 768);
  CHECK(b.pixel_hidden == 16);
  CHECK(b.heads == 12);
  CHECK(l.depth_patch == 22);
  CHECK(l.depth_pixel == 4);
  CHECK(l.hidden == 1024);
  CHECK(l.heads == 16);
  CHECK(xl.depth_patch == 26);
  CHECK(xl.depth_pixel == 4);
  CHECK(xl.hidden == 1152);
  CHECK(xl.heads == 16);
  CHECK(xl.tokens() == 256);
  CHECK(xl.patch_dim() == 768);
  CHECK_THROWS_AS(preset("S"), ConfigError);
}

TEST_CASE("config validation and map roundtrip") {
  ModelConfig c = toy();
  c.compaction = 2;
  c.variant = Variant::no_pixel_attention;
  c.mlp_ratio = 2.5;
  CHECK(ModelConfig::from_map(c.to_map()) == c);
  ModelConfig bad = toy();
  bad.width = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy();
  bad.pixel_hidden = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  auto kv = c.to_map();
  kv["depht_patch"] = "3";
  CHECK_THROWS_WITH_AS(ModelConfig::from_map(kv), doctest::Contains("depht_patch"), ConfigError);
}

TEST_CASE("patchify layout and roundtrip") {
  std::mt19937_64 rng(1);
  const Tensor one = random_tensor({1, 3, 4, 4}, rng);
  const Tensor tok = patchify(one, 4);
  CHECK(tok.shape() == Shape{1, 1, 48});
  for (std::size_t py = 0; py < 4; ++py)
    for (std::size_t px = 0; px < 4; ++px)
      for (std::size_t c = 0; c < 3; ++c) CHECK(tok[(py * 4 + px) * 3 + c] == one.at({0, c, py, px}));
  CHECK(patchify(Tensor(Shape{1, 3, 256, 256}), 16).shape() == Shape{1, 256, 768});
  const Tensor x = random_tensor({2, 3, 32, 32}, rng);
  const Tensor t = patchify(x, 8);
  CHECK(t.at({1, 5, (3 * 8 + 2) * 3 + 1}) == x.at({1, 1, 8 + 3, 8 + 2}));  // token 5 = patch (1, 1)
  CHECK(bitwise_equal(unpatchify(t, 8, 3, 32, 32), x));
  Tape tape;
  auto v = patchify(tape.constant(x), 8);
  CHECK(bitwise_equal(v.value(), t));
  CHECK(bitwise_equal(unpatchify(v, 8, 3, 32, 32).value(), x));
  CHECK_THROWS_AS(patchify(Tensor(Shape{1, 3, 30, 32}), 8), DimensionError);
}

TEST_CASE("timestep features match the closed-form table") {
  const double t = 0.5;
  const Tensor f = timestep_features(std::span(&t, 1), 8);
  const double expect[8] = {std::sin(500.0), std::cos(500.0), std::sin(50.0), std::cos(50.0),
                            std::sin(5.0),   std::cos(5.0),   std::sin(0.5),  std::cos(0.5)};
  for (std::size_t i = 0; i < 8; ++i) CHECK(f[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("embed_condition") {
  PixelDiTModel model(toy(), 3);
  const std::vector<double> t{0.0, 0.0};
  const std::vector<int> y{5, 5};  // null id
  Tape a, b;
  auto ca = model.embed_condition(a, t, y);
  auto cb = model.embed_condition(b, t, y);
  CHECK(ca.c.shape() == Shape{2, 1, 16});
  CHECK(bitwise_equal(ca.c.value(), cb.c.value()));
  const std::vector<int> bad{6, 0};
  CHECK_THROWS_AS(model.embed_condition(a, t, bad), InputError);
  const std::vector<int> neg{-1, 0};
  CHECK_THROWS_AS(model.embed_condition(a, t, neg), InputError);
}

TEST_CASE("zero-initialized model predicts zero velocity for every variant") {
  for (auto v : {Variant::pixelwise, Variant::patchwise, Variant::global, Variant::no_pixel_attention,
                 Variant::vanilla_dit}) {
    CAPTURE(variant_name(v));
    ModelConfig cfg = toy(v);
    cfg.compaction = v == Variant::pixelwise ? 2 : 1;
    PixelDiTModel model(cfg, 9);
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({3, 3, 8, 8}, rng);
    const std::vector<double> t{0.1, 0.5, 0.9};
    const std::vector<int> y{0, 4, 5};
    Tape tape;
    auto out = model.forward(tape, tape.constant(x), t, y);
    CHECK(out.velocity.shape() == x.shape());
    for (double e : out.velocity.value().values()) CHECK(e == 0.0);
    if (v == Variant::vanilla_dit || v == Variant::no_pixel_attention) {
      CHECK(out.pixel_attention_tokens == 0);
    } else {
      CHECK(out.pixel_attention_tokens == cfg.tokens() * cfg.compaction);
    }
  }
}

TEST_CASE("patch pathway edge cases") {
  ModelConfig cfg = toy();
  std::mt19937_64 rng(5);
  const Tensor s0 = random_tensor({2, 16, 16}, rng);
  const Tensor c = random_tensor({2, 1, 16}, rng);
  for (std::size_t n : {0u, 3u}) {
    cfg.depth_patch = n;
    PixelDiTModel model(cfg, 1);
    Tape tape;
    CHECK(bitwise_equal(model.patch_pathway(tape, tape.constant(s0), tape.constant(c)).value(), s0));
  }
  cfg.depth_patch = 2;
  PixelDiTModel model(cfg, 1);
  model.randomize(4, 0.3);
  auto all = model.params().all();
  std::vector<Parameter*> dit;
  for (Parameter* p : all)
    if (p->name.starts_with("dit.")) dit.push_back(p);
  auto rep = grad_check_parameters(
      [&](Tape& t) { return weighted_sum(t, model.patch_pathway(t, t.constant(s0), t.constant(c))); }, dit, 1e-4);
  CAPTURE(rep.worst);
  CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("end-to-end toy model gradients") {
  for (auto v : {Variant::pixelwise, Variant::vanilla_dit}) {
    ModelConfig cfg = toy(v);
    cfg.repa_dim = v == Variant::pixelwise ? 6 : 0;
    PixelDiTModel model(cfg, 2);
    // Zero-initialized gates would leave most coordinates with an exactly zero
    // gradient, so the check runs on moderate random parameters. At this depth
    // the difference quotient is roundoff-limited, hence the larger step.
    model.randomize(8, 0.2);
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({1, 3, 8, 8}, rng);
    const std::vector<double> t{0.3};
    const std::vector<int> y{1};
    auto all = model.params().all();
    auto rep = grad_check_parameters(
        [&](Tape& tp) {
          auto out = model.forward(tp, tp.constant(x), t, y);
          Var loss = weighted_sum(tp, out.velocity);
          if (out.repa.valid()) loss = add(loss, weighted_sum(tp, out.repa, 7));
          return loss;
        },
        all, 1e-3);
    CAPTURE(variant_name(v));
    CAPTURE(rep.worst);
    CAPTURE(rep.worst_analytic);
    CAPTURE(rep.worst_numeric);
    CHECK(rep.max_rel_error <= 1e-4);
    CHECK(rep.coordinates == model.params().numel());
  }
}

TEST_CASE("variant lattice") {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const std::vector<double> t{0.25, 0.75};
  const std::vector<int> y{0, 3};

  SUBCASE("pixel-wise with duplicated phi rows equals patch-wise") {
    PixelDiTModel pix(toy(Variant::pixelwise), 1), patch(toy(Variant::patchwise), 1);
    patch.randomize(3, 0.3);
    const std::size_t rows = 4, group = 6 * 4;
    for (Parameter* p : patch.params().all()) {
      Parameter& q = pix.params().get(p->name);
      if (p->name.find(".phi.") == std::string::npos) {
        q.value = p->value;
        continue;
      }
      const std::size_t in = p->value.rank() == 2 ? p->value.dim(0) : 1;
      for (std::size_t i = 0; i < in; ++i)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < group; ++j) q.value[(i * rows + r) * group + j] = p->value[i * group + j];
    }
    CHECK(max_abs_diff(pix.velocity(x, t, y), patch.velocity(x, t, y)) <= 1e-12);
  }

  SUBCASE("patch-wise with L-constant conditioning equals global") {
    ModelConfig bc = toy(Variant::patchwise);
    bc.cond_uses_c = true;
    PixelDiTModel patch(bc, 1), global(toy(Variant::global), 1);
    patch.randomize(5, 0.3);
    // zero patch embedding and zero DiT gates give s_N = 0, so s_cond = c on every token
    for (Parameter* p : patch.params().all()) {
      if (p->name.starts_with("patch_embed") || p->name.find(".adaln.") != std::string::npos) p->value.fill(0.0);
      global.params().get(p->name).value = p->value;
    }
    CHECK(bitwise_equal(patch.velocity(x, t, y), global.velocity(x, t, y)));
  }
}

TEST_CASE("forward is deterministic and batch rows are independent") {
  PixelDiTModel a(toy(), 11), b(toy(), 11);
  a.randomize(2, 0.3);
  b.randomize(2, 0.3);
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const std::vector<double> t{0.4, 0.6};
  const std::vector<int> y{2, 1};
  const Tensor va = a.velocity(x, t, y);
  CHECK(bitwise_equal(va, b.velocity(x, t, y)));
  Tensor x1(Shape{1, 3, 8, 8}, std::vector<double>(x.data() + 192, x.data() + 384));
  const std::vector<double> t1{0.6};
  const std::vector<int> y1{1};
  const Tensor v1 = a.velocity(x1, t1, y1);
  for (std::size_t i = 0; i < 192; ++i) CHECK(v1[i] == doctest::Approx(va[192 + i]).epsilon(1e-12));
}

TEST_CASE("forward rejects mismatched inputs") {
  PixelDiTModel model(toy(), 0);
  const std::vector<double> t{0.5};
  const std::vector<int> y{0};
  CHECK_THROWS_AS(model.velocity(Tensor(Shape{1, 3, 8, 6}), t, y), DimensionError);
  CHECK_THROWS_AS(model.velocity(Tensor(Shape{2, 3, 8, 8}), t, y), DimensionError);
}

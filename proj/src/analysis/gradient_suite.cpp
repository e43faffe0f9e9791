#include "pixeldit/gradient_suite.hpp"

#include <functional>

#include "pixeldit/blocks.hpp"
#include "pixeldit/grad_check.hpp"
#include "pixeldit/model.hpp"

namespace pixeldit {

namespace {

Tensor draw(Shape shape, Rng& rng, double stddev = 1.0) { return normal_tensor(std::move(shape), stddev, rng); }

// sum(y * w) with fixed random weights, so every output coordinate matters.
Var weighted(Tape& tape, const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, tape.constant(draw(y.shape(), rng))));
}

void randomize(ParameterSet& ps, std::uint64_t seed, double stddev) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (Parameter* p : ps.all()) {
    const bool gain = p->name.ends_with(".gain");
    for (auto& v : p->value.values()) v = (gain ? 1.0 : 0.0) + n(rng);
  }
}

class Suite {
 public:
  Suite(std::uint64_t seed, double tol) : rng_(seed), seed_(seed), tol_(tol) {}

  void input(const std::string& name, const Tensor& x, const std::function<Var(Tape&, const Var&)>& f,
             double step = 1e-5) {
    const std::uint64_t s = seed_ + out_.size();
    add("primitive", name, grad_check([&](Tape& t, const Var& v) { return weighted(t, f(t, v), s); }, x, step));
  }

  void params(const std::string& group, const std::string& name, ParameterSet& ps, const ParamLossFn& f,
              double step) {
    auto all = ps.all();
    add(group, name, grad_check_parameters(f, all, step));
  }

  Rng& rng() { return rng_; }
  std::uint64_t seed() const { return seed_ + out_.size(); }
  std::vector<GradientSuiteEntry> take() { return std::move(out_); }

 private:
  void add(const std::string& group, const std::string& name, const GradCheckReport& r) {
    out_.push_back({group, name, r.max_rel_error, tol_, r.coordinates, r.worst});
  }

  Rng rng_;
  std::uint64_t seed_;
  double tol_;
  std::vector<GradientSuiteEntry> out_;
};

void primitives(Suite& s) {
  Rng& rng = s.rng();
  const Tensor x = draw({2, 3, 4}, rng), other = draw({2, 3, 4}, rng), row = draw({4}, rng);
  const Tensor w = draw({4, 3}, rng), bias = draw({3}, rng), gain = draw({4}, rng), table = draw({5, 4}, rng);
  const Tensor mat = draw({2, 4, 5}, rng);
  const std::vector<int> ids{4, 0, 4, 2};

  s.input("add", x, [&](Tape& t, const Var& v) { return add(v, t.constant(row)); });
  s.input("add_broadcast_operand", row, [&](Tape& t, const Var& v) { return add(t.constant(x), v); });
  s.input("sub", x, [&](Tape& t, const Var& v) { return sub(t.constant(row), v); });
  s.input("mul", x, [&](Tape& t, const Var& v) { return mul(v, t.constant(other)); });
  s.input("mul_self", x, [](Tape&, const Var& v) { return mul(v, v); });
  s.input("scale", x, [](Tape&, const Var& v) { return scale(v, -1.7); });
  s.input("add_scalar", x, [](Tape&, const Var& v) { return add_scalar(v, 0.3); });
  s.input("square", x, [](Tape&, const Var& v) { return square(v); });
  s.input("exp", x, [](Tape&, const Var& v) { return pixeldit::exp(v); });
  s.input("silu", x, [](Tape&, const Var& v) { return silu(v); });
  s.input("gelu_tanh", x, [](Tape&, const Var& v) { return gelu_tanh(v); });
  s.input("matmul_lhs", x, [&](Tape& t, const Var& v) { return matmul(v, t.constant(mat)); });
  s.input("matmul_rhs", mat, [&](Tape& t, const Var& v) { return matmul(t.constant(x), v); });
  s.input("linear", x, [&](Tape& t, const Var& v) { return linear(v, t.constant(w), t.constant(bias)); });
  s.input("linear_weight", w, [&](Tape& t, const Var& v) { return linear(t.constant(x), v, t.constant(bias)); });
  s.input("linear_bias", bias, [&](Tape& t, const Var& v) { return linear(t.constant(x), t.constant(w), v); });
  s.input("softmax", x, [](Tape&, const Var& v) { return softmax_lastdim(v); });
  s.input("reshape", x, [](Tape&, const Var& v) { return reshape(v, {6, 4}); });
  s.input("permute", x, [](Tape&, const Var& v) { return permute(v, {2, 0, 1}); });
  s.input("slice", x, [](Tape&, const Var& v) { return slice_lastdim(v, 1, 2); });
  s.input("broadcast_to", row, [](Tape&, const Var& v) { return broadcast_to(v, {2, 3, 4}); });
  s.input("gather_rows", table, [&](Tape&, const Var& v) { return gather_rows(v, ids); });
  s.input("sum", x, [](Tape&, const Var& v) { return reshape(sum(square(v)), {1}); });
  s.input("mean", x, [](Tape&, const Var& v) { return reshape(mean(square(v)), {1}); });
  s.input("rms_norm", x, [&](Tape& t, const Var& v) { return rms_norm(v, t.constant(gain)); });
  s.input("rms_norm_gain", gain, [&](Tape& t, const Var& v) { return rms_norm(t.constant(x), v); });
  s.input("cosine", x, [&](Tape& t, const Var& v) { return cosine_similarity_lastdim(v, t.constant(other)); });
  s.input("rope_2d", draw({2, 6, 2, 8}, rng), [](Tape&, const Var& v) { return rope_2d(v, {2, 3}); });
}

void blocks(Suite& s) {
  Rng& rng = s.rng();
  {
    ParameterSet ps;
    auto attn = make_attention(ps, "attn", 8, rng);
    randomize(ps, s.seed(), 0.4);
    const auto cfg = AttentionConfig::for_width(8, 2, true, {2, 2});
    const Tensor x = draw({2, 4, 8}, rng);
    const std::uint64_t ws = s.seed();
    s.params("block", "attention", ps,
             [&](Tape& t) { return weighted(t, multi_head_attention(t, t.constant(x), attn, cfg), ws); }, 1e-4);
  }
  {
    ParameterSet ps;
    auto m = make_mlp(ps, "mlp", 6, 4.0, rng);
    randomize(ps, s.seed(), 0.4);
    const Tensor x = draw({3, 6}, rng);
    const std::uint64_t ws = s.seed();
    s.params("block", "mlp", ps, [&](Tape& t) { return weighted(t, mlp(t, t.constant(x), m), ws); }, 1e-4);
  }
  {
    ParameterSet ps;
    auto block = make_dit_block(ps, "dit.0", 8, 4.0, rng);
    randomize(ps, s.seed(), 0.4);
    const auto cfg = AttentionConfig::for_width(8, 2, true, {2, 2});
    const Tensor x = draw({2, 4, 8}, rng), c = draw({2, 1, 8}, rng);
    s.params("block", "dit_block", ps,
             [&](Tape& t) { return sum(dit_block(t, t.constant(x), t.constant(c), block, cfg)); }, 1e-4);
  }
  struct PitCase {
    const char* name;
    PixelModulation mod;
    std::size_t k;
    bool attention;
  };
  const PitCase cases[] = {{"pit_block_pixelwise", PixelModulation::pixelwise, 1, true},
                           {"pit_block_pixelwise_k2", PixelModulation::pixelwise, 2, true},
                           {"pit_block_patchwise", PixelModulation::patchwise, 1, true},
                           {"pit_block_global", PixelModulation::global, 1, true},
                           {"pit_block_no_attention", PixelModulation::pixelwise, 1, false}};
  for (const auto& pc : cases) {
    ParameterSet ps;
    PitGeometry g;
    g.patch_area = 4;
    g.pixel_width = 4;
    g.width = 8;
    g.modulation = pc.mod;
    g.compaction = pc.k;
    g.attention = pc.attention;
    auto block = make_pit_block(ps, "pit.0", g, rng);
    randomize(ps, s.seed(), 0.4);
    const auto cfg = AttentionConfig::for_width(8, 2, true, {2, 2 * pc.k});
    const Tensor x = draw({2 * 4, 4, 4}, rng), cond = draw({2, 4, 8}, rng);
    const std::uint64_t ws = s.seed();
    s.params("block", pc.name, ps,
             [&](Tape& t) { return weighted(t, pit_block(t, t.constant(x), t.constant(cond), block, g, cfg), ws); },
             1e-4);
  }
}

void models(Suite& s) {
  for (auto v : {Variant::pixelwise, Variant::vanilla_dit}) {
    ModelConfig cfg;
    cfg.depth_patch = 2;
    cfg.depth_pixel = 2;
    cfg.hidden = 16;
    cfg.pixel_hidden = 4;
    cfg.patch = 2;
    cfg.heads = 2;
    cfg.num_classes = 5;
    cfg.height = cfg.width = 8;
    cfg.variant = v;
    cfg.repa_dim = v == Variant::pixelwise ? 6 : 0;
    const Tensor x = draw({1, 3, 8, 8}, s.rng());
    const std::vector<double> t{0.3};
    const std::vector<int> y{1};
    auto loss = [&](PixelDiTModel& model, std::uint64_t ws) {
      return [&model, &x, &t, &y, ws](Tape& tp) {
        auto out = model.forward(tp, tp.constant(x), t, y);
        Var l = weighted(tp, out.velocity, ws);
        if (out.repa.valid()) l = add(l, weighted(tp, out.repa, ws + 1));
        return l;
      };
    };
    if (v == Variant::pixelwise) {
      PixelDiTModel zero(cfg, s.seed());
      s.params("model", "toy_model_zero_init", zero.params(), loss(zero, s.seed()), 1e-4);
    }
    PixelDiTModel model(cfg, s.seed());
    // random parameters so that no gate silences a path; at this depth the
    // difference quotient is roundoff-limited below h = 1e-3
    model.randomize(s.seed(), 0.2);
    s.params("model", "toy_model_" + variant_name(v), model.params(), loss(model, s.seed()), 1e-3);
  }
}

}  // namespace

std::vector<GradientSuiteEntry> run_gradient_suite(std::uint64_t seed, double tolerance) {
  Suite s(seed, tolerance);
  primitives(s);
  blocks(s);
  models(s);
  return s.take();
}

}  // namespace pixeldit

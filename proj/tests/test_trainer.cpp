#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pixeldit/errors.hpp"
#include "pixeldit/trainer.hpp"
#include "test_util.hpp"

using namespace pixeldit;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

ModelConfig toy(Variant v = Variant::pixelwise) {
  ModelConfig c;
  c.depth_patch = 2;
  c.depth_pixel = 1;
  c.hidden = 8;
  c.pixel_hidden = 2;
  c.patch = 2;
  c.heads = 2;
  c.num_classes = 3;
  c.height = c.width = 4;
  c.repa_dim = 4;
  c.variant = v;
  return c;
}

ToyDatasetSpec toy_data() {
  ToyDatasetSpec d;
  d.height = d.width = 4;
  d.samples_per_class = 6;
  d.seed = 3;
  return d;
}

TrainConfig toy_train() {
  TrainConfig t;
  t.lr = 1e-2;
  t.batch_size = 4;
  t.total_steps = 12;
  t.switch_step = 7;
  t.lr_after_switch = 1e-3;
  t.seed = 21;
  t.ema_decay = 0.9;
  t.checkpoint_every = 5;
  return t;
}

std::string run_stream(const TrainConfig& cfg, const fs::path& dir = {}) {
  PixelDiTModel model(toy(), 1);
  const ImageDataset data = make_toy_dataset(toy_data());
  Trainer tr(model, data, cfg);
  std::ostringstream os;
  tr.run(&os, dir);
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pixeldit_test_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("scalar Adam oracle") {
  Parameter p("w", Tensor::from({0.5}));
  p.grad = Tensor::from({1.0});
  std::vector<Parameter*> ps{&p};
  TrainConfig cfg;
  AdamMoments mom;
  REQUIRE(adamw_step(ps, mom, 0.1, cfg));
  // m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1
  const double m_hat = (0.1 * 1.0) / (1 - 0.9), v_hat = (0.001 * 1.0) / (1 - 0.999);
  CHECK(p.value[0] == doctest::Approx(0.5 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-15));
  CHECK(mom.m[0][0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(mom.v[0][0] == doctest::Approx(0.001).epsilon(1e-15));

  // second step with g = -2: closed form of the two-step recursion
  p.grad = Tensor::from({-2.0});
  const double before = p.value[0];
  REQUIRE(adamw_step(ps, mom, 0.1, cfg));
  const double m2 = 0.9 * 0.1 + 0.1 * -2.0, v2 = 0.999 * 0.001 + 0.001 * 4.0;
  const double step2 = 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(p.value[0] == doctest::Approx(before - step2).epsilon(1e-14));
}

TEST_CASE("zero gradients: moments decay, decay shrinks, non-finite skips") {
  Parameter p("w", Tensor::from({1.0, -2.0}));
  p.grad = Tensor::from({0.0, 0.0});
  std::vector<Parameter*> ps{&p};
  TrainConfig cfg;
  AdamMoments mom;
  mom.m = {Tensor::from({0.5, 0.5})};
  mom.v = {Tensor::from({0.25, 0.25})};
  mom.t = 3;
  cfg.weight_decay = 0.0;
  REQUIRE(adamw_step(ps, mom, 0.1, cfg));
  CHECK(mom.m[0][0] == 0.9 * 0.5);
  CHECK(mom.v[0][0] == 0.999 * 0.25);

  Parameter q("w", Tensor::from({1.0, -2.0}));
  q.grad = Tensor::from({0.0, 0.0});
  std::vector<Parameter*> qs{&q};
  AdamMoments fresh;
  cfg.weight_decay = 0.05;
  REQUIRE(adamw_step(qs, fresh, 0.1, cfg));
  CHECK(q.value[0] == 1.0 * (1 - 0.1 * 0.05));
  CHECK(q.value[1] == -2.0 * (1 - 0.1 * 0.05));

  q.grad = Tensor::from({std::nan(""), 0.0});
  const Tensor keep = q.value;
  CHECK_FALSE(adamw_step(qs, fresh, 0.1, cfg));
  CHECK(bitwise_equal(q.value, keep));
  CHECK(fresh.t == 1);
}

TEST_CASE("gradient clipping") {
  Parameter a("a", Tensor::from({3.0})), b("b", Tensor::from({0.0, 0.0}));
  a.grad = Tensor::from({6.0});
  b.grad = Tensor::from({0.0, 8.0});
  std::vector<Parameter*> ps{&a, &b};
  CHECK(clip_gradients(ps, 100.0) == 10.0);
  CHECK(a.grad[0] == 6.0);
  CHECK(clip_gradients(ps, 1.0) == 10.0);
  CHECK(a.grad[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(std::hypot(a.grad[0], b.grad[1]) == doctest::Approx(1.0).epsilon(1e-9));

  // clipping a split set equals clipping its flattened concatenation
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter x("x", Tensor(Shape{3, 2})), y("y", Tensor(Shape{5})), flat("f", Tensor(Shape{11}));
    x.grad = random_tensor({3, 2}, rng, 2.0);
    y.grad = random_tensor({5}, rng, 2.0);
    flat.grad = Tensor(Shape{11});
    for (std::size_t i = 0; i < 6; ++i) flat.grad[i] = x.grad[i];
    for (std::size_t i = 0; i < 5; ++i) flat.grad[6 + i] = y.grad[i];
    std::vector<Parameter*> split{&x, &y}, one{&flat};
    const double max_norm = 0.5 + trial * 0.3;
    CHECK(clip_gradients(split, max_norm) == doctest::Approx(clip_gradients(one, max_norm)).epsilon(1e-14));
    double sq = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(x.grad[i] == doctest::Approx(flat.grad[i]).epsilon(1e-14));
      sq += x.grad[i] * x.grad[i];
    }
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(y.grad[i] == doctest::Approx(flat.grad[6 + i]).epsilon(1e-14));
      sq += y.grad[i] * y.grad[i];
    }
    CHECK(std::sqrt(sq) <= max_norm + 1e-6);
  }
}

TEST_CASE("EMA is geometric under frozen parameters") {
  Parameter p("w", Tensor::from({2.0, -1.0}));
  std::vector<Parameter*> ps{&p};
  std::vector<Tensor> ema{Tensor::from({0.0, 0.0})};
  const double decay = 0.9999;
  double gap = 2.0;
  for (int k = 1; k <= 1000; ++k) {
    ema_update(ema, ps, decay);
    const double g = 2.0 - ema[0][0];
    CHECK(g / gap == doctest::Approx(decay).epsilon(1e-9));
    gap = g;
  }
  CHECK(2.0 - ema[0][0] == doctest::Approx(2.0 * std::pow(decay, 1000)).epsilon(1e-10));

  std::vector<Tensor> fixed{p.value};
  ema_update(fixed, ps, 0.5);
  CHECK(bitwise_equal(fixed[0], p.value));
  std::vector<Tensor> zero{Tensor::from({7.0, 7.0})};
  ema_update(zero, ps, 0.0);
  CHECK(bitwise_equal(zero[0], p.value));
}

TEST_CASE("training is deterministic and logs the lr switch") {
  const TrainConfig cfg = toy_train();
  const std::string a = run_stream(cfg), b = run_stream(cfg);
  CHECK(a == b);
  std::istringstream in(a);
  std::string line;
  std::getline(in, line);
  CHECK(line == kMetricsHeader);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto lr = line.substr(line.rfind(',') + 1);
    CHECK(parse_double("lr", lr) == (rows < 7 ? 1e-2 : 1e-3));
    ++rows;
  }
  CHECK(rows == 12);
  TrainConfig other = cfg;
  other.seed = 22;
  CHECK(run_stream(other) != a);
}

TEST_CASE("resume reproduces the uninterrupted run") {
  const TrainConfig cfg = toy_train();
  const fs::path dir = scratch_dir("resume");
  const std::string full = run_stream(cfg, dir);
  REQUIRE(fs::exists(dir / "step_00000005.ckpt"));
  REQUIRE(fs::exists(dir / "step_00000010.ckpt"));
  REQUIRE(fs::exists(dir / "final.ckpt"));

  const Checkpoint mid = load_checkpoint(dir / "step_00000005.ckpt");
  PixelDiTModel model(toy(), 999);  // different init, overwritten by resume
  const ImageDataset data = make_toy_dataset(toy_data());
  Trainer tr(model, data, cfg);
  tr.resume(mid);
  CHECK(tr.steps_done() == 5);
  std::ostringstream rest;
  tr.run(&rest);
  // rows 5..11 of the full stream
  std::istringstream in(full);
  std::string line, tail;
  for (int i = 0; std::getline(in, line); ++i)
    if (i > 5) tail += line + "\n";
  CHECK(rest.str() == tail);

  // final state matches bitwise, so the checkpoint bytes do too
  CHECK(encode_checkpoint(tr.checkpoint()) == slurp(dir / "final.ckpt"));
  const Checkpoint fin = load_checkpoint(dir / "final.ckpt");
  save_checkpoint(dir / "again.ckpt", fin);
  CHECK(slurp(dir / "again.ckpt") == slurp(dir / "final.ckpt"));
  CHECK(fin.find("ema/pixel_head.weight") != nullptr);
  CHECK(fin.find("adam_m/pixel_head.weight") != nullptr);

  // the raw weights load back into a standalone model
  auto loaded = model_from_checkpoint(fin);
  for (Parameter* p : model.params().all()) CHECK(bitwise_equal(loaded->params().get(p->name).value, p->value));
}

TEST_CASE("resume rejects a checkpoint from another configuration") {
  const fs::path dir = scratch_dir("mismatch");
  run_stream(toy_train(), dir);
  const Checkpoint ck = load_checkpoint(dir / "final.ckpt");
  ModelConfig other = toy();
  other.hidden = 12;
  other.heads = 3;
  PixelDiTModel model(other, 1);
  const ImageDataset data = make_toy_dataset(toy_data());
  Trainer tr(model, data, toy_train());
  CHECK_THROWS_AS(tr.resume(ck), ConfigError);
}

TEST_CASE("zero steps leave the model untouched") {
  PixelDiTModel model(toy(), 4);
  model.randomize(1, 0.1);
  for (Parameter* p : model.params().all()) round_to_float(p->value);
  std::vector<Tensor> before;
  for (Parameter* p : model.params().all()) before.push_back(p->value);
  const ImageDataset data = make_toy_dataset(toy_data());
  TrainConfig cfg = toy_train();
  cfg.total_steps = 0;
  Trainer tr(model, data, cfg);
  std::ostringstream os;
  tr.run(&os);
  CHECK(os.str() == std::string(kMetricsHeader) + "\n");
  CHECK(tr.history().empty());
  auto all = model.params().all();
  for (std::size_t k = 0; k < all.size(); ++k) CHECK(bitwise_equal(all[k]->value, before[k]));
}

TEST_CASE("a short run reduces the loss and moves EMA towards the weights") {
  PixelDiTModel model(toy(), 1);
  ToyDatasetSpec ds = toy_data();
  ds.samples_per_class = 32;
  const ImageDataset data = make_toy_dataset(ds);
  TrainConfig cfg = toy_train();
  cfg.total_steps = 150;
  cfg.switch_step = 0;
  cfg.batch_size = 16;
  cfg.checkpoint_every = 0;
  Trainer tr(model, data, cfg);
  tr.run(nullptr);
  const auto& h = tr.history();
  double first = 0, last = 0;
  for (int i = 0; i < 25; ++i) {
    first += h[i].loss_diff;
    last += h[h.size() - 1 - i].loss_diff;
  }
  CHECK(last < 0.8 * first);
  CHECK(h.front().loss_repa > 0.0);
  CHECK(tr.skipped_steps() == 0);
  for (const auto& r : h) CHECK(r.grad_norm >= 0.0);
}

TEST_CASE("trainer config validation") {
  TrainConfig c;
  c.ema_decay = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.clip_norm = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.seed = 987654321987ull;
  c.lr = 3e-4;
  CHECK(TrainConfig::from_map(c.to_map()).to_map() == c.to_map());
  CHECK_THROWS_WITH_AS(TrainConfig::from_map({{"learning_rate", "1"}}), doctest::Contains("train.learning_rate"),
                       ConfigError);

  PixelDiTModel model(toy(), 1);
  const ImageDataset data = make_toy_dataset(toy_data());
  TrainConfig big = toy_train();
  big.batch_size = 100;
  CHECK_THROWS_AS(Trainer(model, data, big), ConfigError);
}

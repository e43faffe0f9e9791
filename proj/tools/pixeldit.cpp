// Command-line front end: train, sample, grad-check, flops, params, ablate,
// make-data. Usage errors exit 2, runtime failures exit 1.
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pixeldit/analysis.hpp"
#include "pixeldit/checkpoint.hpp"
#include "pixeldit/errors.hpp"
#include "pixeldit/gradient_suite.hpp"
#include "pixeldit/run.hpp"

using namespace pixeldit;
namespace fs = std::filesystem;

namespace {

// "section.key=value" pairs given with --set.
void apply_overrides(KeyValues& kv, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
}

ModelConfig model_from_args(const std::string& preset_name, const std::string& config_path,
                            const std::vector<std::string>& sets) {
  if (!preset_name.empty() && !config_path.empty()) throw ConfigError("give either --preset or --config, not both");
  KeyValues kv;
  if (!config_path.empty()) kv = read_config_file(config_path);
  apply_overrides(kv, sets);
  KeyValues model_kv;
  for (const auto& [k, v] : kv) {
    if (!k.starts_with("model.")) continue;  // other sections do not affect cost
    model_kv[k.substr(6)] = v;
  }
  const ModelConfig base = preset_name.empty() ? ModelConfig{} : preset(preset_name);
  return model_config_from(model_kv, base);
}

std::string with_commas(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

void print_params(const CostReport& r) {
  std::cout << std::left << std::setw(16) << "module" << std::right << std::setw(16) << "params" << "\n";
  for (const auto& [name, n] : r.params_by_module) {
    std::cout << std::left << std::setw(16) << name << std::right << std::setw(16) << with_commas(n) << "\n";
  }
  std::cout << std::left << std::setw(16) << "total" << std::right << std::setw(16) << with_commas(r.params_total)
            << "  (" << std::fixed << std::setprecision(1) << r.params_total / 1e6 << "M)\n";
}

int cmd_train(const std::string& config, const std::string& resume, const std::string& data_dir,
              const std::vector<std::string>& sets) {
  KeyValues kv = read_config_file(config);
  apply_overrides(kv, sets);
  const RunConfig rc = RunConfig::from_map(kv);
  const ImageDataset data = data_dir.empty() ? make_toy_dataset(rc.data) : read_dataset(data_dir);
  PixelDiTModel model(rc.model, rc.train.seed);
  Trainer trainer(model, data, rc.train);
  if (!resume.empty()) trainer.resume(load_checkpoint(resume));
  if (!rc.checkpoint_dir.empty()) fs::create_directories(rc.checkpoint_dir);
  if (rc.metrics_file.has_parent_path()) fs::create_directories(rc.metrics_file.parent_path());
  std::ofstream metrics(rc.metrics_file, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw Error("cannot write metrics file " + rc.metrics_file.string());
  const std::size_t start = trainer.steps_done();
  trainer.run(&metrics, rc.checkpoint_dir);
  const auto& h = trainer.history();
  std::cout << "trained steps " << start << ".." << trainer.steps_done();
  if (!h.empty()) std::cout << ", last loss " << format_double(h.back().loss);
  std::cout << ", skipped " << trainer.skipped_steps() << "\n";
  if (!rc.checkpoint_dir.empty()) std::cout << "checkpoint " << (rc.checkpoint_dir / "final.ckpt").string() << "\n";
  return 0;
}

struct SampleArgs {
  std::string checkpoint;
  std::vector<int> classes;
  std::size_t per_class = 4;
  std::string out = "samples";
  std::string interval;
  bool ema = false;
  SamplerConfig cfg;
};

int cmd_sample(SampleArgs a) {
  if (!a.interval.empty()) {
    const auto comma = a.interval.find(',');
    if (comma == std::string::npos) throw ConfigError("--interval expects lo,hi");
    a.cfg.cfg_lo = parse_double("interval", a.interval.substr(0, comma));
    a.cfg.cfg_hi = parse_double("interval", a.interval.substr(comma + 1));
  }
  a.cfg.validate();
  std::ifstream in(a.checkpoint, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + a.checkpoint);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const Checkpoint ckpt = decode_checkpoint(bytes);
  auto model = model_from_checkpoint(ckpt, a.ema ? "ema/" : "params/");
  if (a.classes.empty()) throw ConfigError("--class needs at least one class id");
  std::vector<int> y;
  for (int k : a.classes)
    for (std::size_t i = 0; i < a.per_class; ++i) y.push_back(k);
  const Tensor images = sample(*model, a.cfg, y);

  fs::create_directories(a.out);
  const ModelConfig& mc = model->config();
  const std::size_t per_image = mc.channels * mc.height * mc.width;
  const char* ext = mc.channels == 1 ? "pgm" : "ppm";
  nlohmann::ordered_json files = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < y.size(); ++i) {
    Tensor img(Shape{mc.channels, mc.height, mc.width},
               std::vector<double>(images.data() + i * per_image, images.data() + (i + 1) * per_image));
    char name[64];
    std::snprintf(name, sizeof(name), "class_%d_%03zu.%s", y[i], i % a.per_class, ext);
    write_image(fs::path(a.out) / name, img);
    files.push_back({{"file", name}, {"class", y[i]}});
  }
  nlohmann::ordered_json manifest;
  manifest["checkpoint"] = a.checkpoint;
  manifest["checkpoint_sha256"] = sha256_hex(bytes);
  manifest["weights"] = a.ema ? "ema" : "raw";
  manifest["sampler"] = {{"solver", solver_name(a.cfg.solver)}, {"steps", a.cfg.steps},
                         {"cfg_scale", a.cfg.cfg_scale},       {"cfg_interval", {a.cfg.cfg_lo, a.cfg.cfg_hi}},
                         {"shift", a.cfg.shift},               {"seed", a.cfg.seed}};
  manifest["images"] = files;
  std::ofstream(fs::path(a.out) / "manifest.json") << manifest.dump(2) << "\n";
  std::cout << "wrote " << y.size() << " images and manifest.json to " << a.out << "\n";
  return 0;
}

int cmd_grad_check(std::uint64_t seed) {
  bool ok = true;
  for (const auto& e : run_gradient_suite(seed)) {
    ok = ok && e.passed();
    std::cout << std::left << std::setw(10) << e.group << std::setw(26) << e.name << std::right << std::setw(8)
              << e.coordinates << "  max_rel " << std::scientific << std::setprecision(2) << e.max_rel_error
              << std::defaultfloat << "  " << (e.passed() ? "ok" : "FAIL (" + e.worst + ")") << "\n";
  }
  std::cout << (ok ? "all gradient checks passed" : "gradient checks FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_flops(const ModelConfig& cfg) {
  const CostReport r = estimate_flops(cfg);
  std::cout << "variant " << variant_name(cfg.variant) << " at " << cfg.height << "x" << cfg.width << ", patch "
            << cfg.patch << "\n";
  std::cout << std::fixed << std::setprecision(2);
  std::cout << "forward GFLOPs        " << r.flops_forward / 1e9 << "\n";
  std::cout << "attention GFLOPs      " << r.attention_flops / 1e9 << "\n";
  std::cout << "pixel attention len   " << r.attention_token_count << "\n";
  std::cout << "params                " << r.params_total / 1e6 << "M\n";
  return 0;
}

int cmd_ablate(const std::string& spec, const std::string& out, const std::string& chart,
               const std::string& metrics_dir) {
  AblationOptions opts;
  const auto entries = parse_ablation_spec(read_config_file(spec), &opts);
  if (!chart.empty()) opts.chart = chart;
  if (!metrics_dir.empty()) opts.metrics_dir = metrics_dir;
  std::ofstream file;
  std::ostream* csv = &std::cout;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw Error("cannot write " + out);
    csv = &file;
  }
  const auto rows = run_ablation_sweep(entries, opts, csv);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  if (!out.empty()) std::cout << "wrote " << rows.size() << " rows to " << out << "\n";
  if (failed) std::cerr << failed << " row(s) failed\n";
  return 0;
}

int cmd_make_data(const std::string& config, const std::vector<std::string>& sets, const std::string& out) {
  KeyValues kv;
  if (!config.empty()) kv = read_config_file(config);
  apply_overrides(kv, sets);
  const RunConfig rc = RunConfig::from_map(kv);
  const std::size_t n = write_dataset(make_toy_dataset(rc.data), out);
  std::cout << "wrote " << n << " images (" << toy_kind_name(rc.data.kind) << ") to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-space dual-level diffusion transformer toolkit"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model from a run config");
  std::string train_config, resume, data_dir;
  std::vector<std::string> train_sets;
  std::string steps, lr, seed_override, ckpt_dir, metrics_file;
  train->add_option("--config", train_config, "run config file")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--data-dir", data_dir, "read images written by make-data instead of generating them");
  train->add_option("--steps", steps, "train.total_steps");
  train->add_option("--lr", lr, "train.lr");
  train->add_option("--seed", seed_override, "train.seed");
  train->add_option("--checkpoint-dir", ckpt_dir, "paths.checkpoint_dir");
  train->add_option("--metrics", metrics_file, "paths.metrics_file");
  train->add_option("--set", train_sets, "override any config key: section.key=value");

  auto* samp = app.add_subcommand("sample", "sample images from a checkpoint");
  SampleArgs sa;
  std::string solver = "flow_dpm";
  samp->add_option("--checkpoint", sa.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  samp->add_option("--class", sa.classes, "class ids")->required()->delimiter(',');
  samp->add_option("--num", sa.per_class, "images per class")->capture_default_str();
  samp->add_option("--steps", sa.cfg.steps, "solver steps")->capture_default_str();
  samp->add_option("--cfg", sa.cfg.cfg_scale, "guidance scale")->capture_default_str();
  samp->add_option("--interval", sa.interval, "guidance interval lo,hi");
  samp->add_option("--shift", sa.cfg.shift, "timestep shift alpha")->capture_default_str();
  samp->add_option("--solver", solver, "euler, heun or flow_dpm")
      ->check(CLI::IsMember({"euler", "heun", "flow_dpm"}))
      ->capture_default_str();
  samp->add_option("--seed", sa.cfg.seed, "noise seed")->capture_default_str();
  samp->add_option("--out", sa.out, "output directory")->capture_default_str();
  samp->add_flag("--ema", sa.ema, "use the EMA weights");

  auto* grad = app.add_subcommand("grad-check", "run the finite-difference gradient suite");
  std::uint64_t grad_seed = 0;
  grad->add_option("--seed", grad_seed, "seed for inputs and parameters")->capture_default_str();

  std::string preset_name, cost_config;
  std::vector<std::string> cost_sets;
  std::size_t resolution = 0;
  auto* flops = app.add_subcommand("flops", "forward FLOPs of a preset or config");
  auto* params = app.add_subcommand("params", "parameter count of a preset or config");
  for (auto* sub : {flops, params}) {
    auto* p = sub->add_option("--preset", preset_name, "B, L or XL");
    auto* c = sub->add_option("--config", cost_config, "config file with model.* keys")->check(CLI::ExistingFile);
    p->excludes(c);
    sub->add_option("--set", cost_sets, "override a model key: model.key=value");
  }
  flops->add_option("--resolution", resolution, "square image size (defaults to the config's)");

  auto* ablate = app.add_subcommand("ablate", "train and compare configurations");
  std::string spec, ablate_out, chart, metrics_dir;
  ablate->add_option("--spec", spec, "ablation spec file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_out, "CSV output (stdout when absent)");
  ablate->add_option("--chart", chart, "loss-curve SVG");
  ablate->add_option("--metrics-dir", metrics_dir, "per-row metrics CSVs");

  auto* make_data = app.add_subcommand("make-data", "write a toy dataset as netpbm files");
  std::string data_config, data_out = "data";
  std::vector<std::string> data_sets;
  make_data->add_option("--config", data_config, "run config file (data.* keys)")->check(CLI::ExistingFile);
  make_data->add_option("--set", data_sets, "override a key: data.key=value");
  make_data->add_option("--out", data_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      auto sets = train_sets;
      if (!steps.empty()) sets.push_back("train.total_steps=" + steps);
      if (!lr.empty()) sets.push_back("train.lr=" + lr);
      if (!seed_override.empty()) sets.push_back("train.seed=" + seed_override);
      if (!ckpt_dir.empty()) sets.push_back("paths.checkpoint_dir=" + ckpt_dir);
      if (!metrics_file.empty()) sets.push_back("paths.metrics_file=" + metrics_file);
      return cmd_train(train_config, resume, data_dir, sets);
    }
    if (*samp) {
      sa.cfg.solver = parse_solver(solver);
      return cmd_sample(sa);
    }
    if (*grad) return cmd_grad_check(grad_seed);
    if (*flops || *params) {
      if (preset_name.empty() && cost_config.empty()) {
        std::cerr << "give --preset or --config\n";
        return 2;
      }
      ModelConfig cfg = model_from_args(preset_name, cost_config, cost_sets);
      if (*params) {
        print_params(count_params(cfg));
        return 0;
      }
      if (resolution) cfg.height = cfg.width = resolution;
      return cmd_flops(cfg);
    }
    if (*ablate) return cmd_ablate(spec, ablate_out, chart, metrics_dir);
    if (*make_data) return cmd_make_data(data_config, data_sets, data_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

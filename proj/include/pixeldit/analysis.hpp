#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pixeldit/model.hpp"
#include "pixeldit/run.hpp"

namespace pixeldit {

// FLOPs count one multiply-add as 2 and cover matmuls plus the attention
// score and value contractions; norms, activations and softmax are excluded.
struct CostReport {
  std::size_t params_total = 0;
  std::vector<std::pair<std::string, std::size_t>> params_by_module;  // construction order
  double flops_forward = 0.0;    // one image
  double attention_flops = 0.0;  // quadratic terms of both pathways
  std::size_t attention_token_count = 0;  // pixel-pathway attention sequence length
};

// Closed-form count; equals the constructed model's numel exactly.
CostReport count_params(const ModelConfig& cfg);
// Closed-form FLOPs at cfg's resolution, with the parameter fields filled too.
CostReport estimate_flops(const ModelConfig& cfg);
// Counts by top-level name segment of an existing model.
std::vector<std::pair<std::string, std::size_t>> measure_params(const PixelDiTModel& model);

// Score plus value contraction FLOPs of all pixel-pathway attention layers
// at width D, over either the compacted k L tokens or all H W pixels.
double pixel_attention_quadratic_flops(const ModelConfig& cfg, bool compacted);

struct AblationEntry {
  std::string name;
  RunConfig run;
};

struct AblationOptions {
  std::size_t samples_per_class = 16;
  std::filesystem::path metrics_dir;  // per-row metrics CSVs when non-empty
  std::filesystem::path chart;        // loss-curve SVG when non-empty
};

struct AblationRow {
  std::string name;
  std::string variant;
  std::size_t params = 0;
  double gflops = 0.0;
  std::size_t steps = 0;
  double initial_loss = 0.0;  // mean of the first min(100, steps) losses
  double final_loss = 0.0;    // mean of the last min(100, steps) losses
  double class_mean_error = 0.0;  // max |mean sample channel - mean template channel|
  double sample_std = 0.0;
  std::string status = "ok";
  std::vector<double> losses;
};

// Parses "<section>.<key>" base entries plus "row.<name>.<section>.<key>"
// overrides; rows come out sorted by name. Options live under "ablate.".
std::vector<AblationEntry> parse_ablation_spec(const KeyValues& kv, AblationOptions* options = nullptr);

inline constexpr const char* kAblationHeader =
    "name,variant,params,gflops,steps,initial_loss,final_loss,class_mean_error,sample_std,status";

// Trains and samples every entry in turn. A failing row is reported with
// status "failed: ..." and does not stop the sweep.
std::vector<AblationRow> run_ablation_sweep(const std::vector<AblationEntry>& entries, const AblationOptions& options,
                                            std::ostream* csv);
std::string format_ablation_row(const AblationRow& row);

struct ChartSeries {
  std::string label;
  std::vector<double> y;  // x is the index
};
// Line chart with axes, ticks and a legend.
std::string render_line_chart_svg(const std::vector<ChartSeries>& series, const std::string& title,
                                  const std::string& x_label, const std::string& y_label);

}  // namespace pixeldit

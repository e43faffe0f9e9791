#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "pixeldit/analysis.hpp"
#include "pixeldit/errors.hpp"
#include "pixeldit/sampler.hpp"

namespace pixeldit {

std::vector<AblationEntry> parse_ablation_spec(const KeyValues& kv, AblationOptions* options) {
  KeyValues base;
  std::vector<std::string> order;
  std::map<std::string, KeyValues> overrides;
  AblationOptions opts;
  for (const auto& [key, value] : kv) {
    if (key.starts_with("ablate.")) {
      const std::string k = key.substr(7);
      if (k == "samples_per_class") {
        opts.samples_per_class = parse_uint(key, value);
        if (opts.samples_per_class == 0) throw ConfigError("ablate.samples_per_class must be positive");
      } else if (k == "metrics_dir") {
        opts.metrics_dir = value;
      } else if (k == "chart") {
        opts.chart = value;
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    } else if (key.starts_with("row.")) {
      const auto dot = key.find('.', 4);
      if (dot == std::string::npos || dot == 4 || dot + 1 == key.size()) {
        throw ConfigError("malformed row key '" + key + "' (expected row.<name>.<section>.<key>)");
      }
      const std::string name = key.substr(4, dot - 4);
      if (!overrides.count(name)) order.push_back(name);
      overrides[name][key.substr(dot + 1)] = value;
    } else {
      base[key] = value;
    }
  }
  if (order.empty()) throw ConfigError("ablation spec defines no rows");
  std::vector<AblationEntry> entries;
  for (const auto& name : order) {
    KeyValues merged = base;
    for (const auto& [k, v] : overrides[name]) merged[k] = v;
    try {
      entries.push_back({name, RunConfig::from_map(merged)});
    } catch (const ConfigError& e) {
      throw ConfigError("row '" + name + "': " + e.what());
    }
  }
  if (options) *options = opts;
  return entries;
}

std::string format_ablation_row(const AblationRow& row) {
  std::ostringstream os;
  std::string status = row.status;
  std::replace(status.begin(), status.end(), ',', ';');
  std::replace(status.begin(), status.end(), '\n', ' ');
  os << row.name << ',' << row.variant << ',' << row.params << ',' << format_double(row.gflops) << ',' << row.steps
     << ',' << format_double(row.initial_loss) << ',' << format_double(row.final_loss) << ','
     << format_double(row.class_mean_error) << ',' << format_double(row.sample_std) << ',' << status;
  return os.str();
}

namespace {

double window_mean(const std::vector<double>& v, bool head) {
  if (v.empty()) return 0.0;
  const std::size_t n = std::min<std::size_t>(100, v.size());
  const auto first = head ? v.begin() : v.end() - static_cast<std::ptrdiff_t>(n);
  return std::accumulate(first, first + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n);
}

void run_row(const AblationEntry& entry, const AblationOptions& options, AblationRow& row) {
  const RunConfig& rc = entry.run;
  rc.validate();
  const CostReport cost = estimate_flops(rc.model);
  row.params = cost.params_total;
  row.gflops = cost.flops_forward / 1e9;

  PixelDiTModel model(rc.model, rc.train.seed);
  const ImageDataset data = make_toy_dataset(rc.data);
  Trainer trainer(model, data, rc.train);
  std::ofstream metrics;
  if (!options.metrics_dir.empty()) {
    std::filesystem::create_directories(options.metrics_dir);
    metrics.open(options.metrics_dir / (entry.name + ".csv"));
    if (!metrics) throw Error("cannot write metrics for row '" + entry.name + "'");
  }
  trainer.run(metrics.is_open() ? &metrics : nullptr);
  row.steps = trainer.steps_done();
  for (const auto& m : trainer.history()) row.losses.push_back(m.loss);
  row.initial_loss = window_mean(row.losses, true);
  row.final_loss = window_mean(row.losses, false);

  const std::size_t nc = rc.model.num_classes, spc = options.samples_per_class;
  std::vector<int> y(nc * spc);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i / spc);
  const Tensor samples = sample(model, rc.sampler, y);
  const std::size_t channels = rc.model.channels, plane = rc.model.height * rc.model.width;
  double worst = 0.0, std_sum = 0.0;
  for (std::size_t k = 0; k < nc; ++k) {
    const Tensor tmpl = toy_template(rc.data, static_cast<int>(k));
    for (std::size_t c = 0; c < channels; ++c) {
      const double target = std::accumulate(tmpl.data() + c * plane, tmpl.data() + (c + 1) * plane, 0.0) /
                            static_cast<double>(plane);
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = k * spc; i < (k + 1) * spc; ++i) {
        const double* p = samples.data() + (i * channels + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          s += p[j];
          s2 += p[j] * p[j];
        }
      }
      const double n = static_cast<double>(spc * plane);
      const double mu = s / n;
      worst = std::max(worst, std::abs(mu - target));
      std_sum += std::sqrt(std::max(0.0, s2 / n - mu * mu));
    }
  }
  row.class_mean_error = worst;
  row.sample_std = std_sum / static_cast<double>(nc * channels);
}

}  // namespace

std::vector<AblationRow> run_ablation_sweep(const std::vector<AblationEntry>& entries, const AblationOptions& options,
                                            std::ostream* csv) {
  std::vector<AblationRow> rows;
  if (csv) *csv << kAblationHeader << '\n' << std::flush;
  for (const auto& entry : entries) {
    AblationRow row;
    row.name = entry.name;
    row.variant = variant_name(entry.run.model.variant);
    try {
      run_row(entry, options, row);
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
    if (csv) *csv << format_ablation_row(row) << '\n' << std::flush;
    rows.push_back(std::move(row));
  }
  if (!options.chart.empty()) {
    std::vector<ChartSeries> series;
    for (const auto& r : rows)
      if (!r.losses.empty()) series.push_back({r.name, r.losses});
    std::ofstream out(options.chart);
    if (!out) throw Error("cannot write chart " + options.chart.string());
    out << render_line_chart_svg(series, "training loss", "step", "loss");
  }
  return rows;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Round step (1, 2 or 5 times a power of ten) giving about `target` ticks.
double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0})
    if (raw <= m * mag) return m * mag;
  return 10.0 * mag;
}

std::string tick_label(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::string render_line_chart_svg(const std::vector<ChartSeries>& series, const std::string& title,
                                  const std::string& x_label, const std::string& y_label) {
  static const char* const palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  const double width = 720, height = 440, left = 70, right = 170, top = 40, bottom = 55;
  const double pw = width - left - right, ph = height - top - bottom;

  std::size_t n = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double x_max = std::max<double>(1.0, static_cast<double>(n > 0 ? n - 1 : 0));
  auto px = [&](double x) { return left + pw * x / x_max; };
  auto py = [&](double y) { return top + ph * (1.0 - (y - lo) / (hi - lo)); };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
     << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";

  const double ys = nice_step(hi - lo, 5);
  for (double v = std::ceil(lo / ys) * ys; v <= hi + 1e-9 * ys; v += ys) {
    os << "<line x1=\"" << left - 4 << "\" y1=\"" << py(v) << "\" x2=\"" << left << "\" y2=\"" << py(v)
       << "\" stroke=\"black\"/><text x=\"" << left - 7 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">"
       << tick_label(v) << "</text>\n";
  }
  const double xs = nice_step(x_max, 6);
  for (double v = 0.0; v <= x_max + 1e-9; v += xs) {
    os << "<line x1=\"" << px(v) << "\" y1=\"" << top + ph << "\" x2=\"" << px(v) << "\" y2=\"" << top + ph + 4
       << "\" stroke=\"black\"/><text x=\"" << px(v) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
       << tick_label(v) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
     << xml_escape(x_label) << "</text>\n";
  os << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << xml_escape(y_label) << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = palette[i % std::size(palette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t j = 0; j < series[i].y.size(); ++j) {
      const double v = series[i].y[j];
      if (std::isfinite(v)) os << px(static_cast<double>(j)) << ',' << py(v) << ' ';
    }
    os << "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 35 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4
       << "\">" << xml_escape(series[i].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pixeldit

#include "resnext/report.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace resnext {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

double nice_step(double range, int target) {
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  const double nice = f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0;
  return nice * mag;
}

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  double step = 1.0;
  bool log = false;

  double map(double v) const {
    if (log) return (std::log10(v) - lo) / (hi - lo);
    return (v - lo) / (hi - lo);
  }
};

Axis linear_axis(double lo, double hi, int ticks) {
  if (hi <= lo) {
    lo -= 1.0;
    hi += 1.0;
  }
  Axis a;
  a.step = nice_step(hi - lo, ticks);
  a.lo = std::floor(lo / a.step) * a.step;
  a.hi = std::ceil(hi / a.step) * a.step;
  return a;
}

class Canvas {
 public:
  Canvas(const std::string& title, const std::string& x_label, const std::string& y_label,
         Axis x, Axis y)
      : x_(x), y_(y) {
    os_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    os_ << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" fill=\"white\"/>\n";
    os_ << "<text class=\"title\" x=\"" << num(kLeft + plot_w() / 2) << "\" y=\"24\" "
        << "text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
        << escape_xml(title) << "</text>\n";
    axes(x_label, y_label);
  }

  double px(double v) const { return kLeft + x_.map(v) * plot_w(); }
  double py(double v) const { return kTop + (1.0 - y_.map(v)) * plot_h(); }
  double plot_w() const { return kWidth - kLeft - kRight; }
  double plot_h() const { return kHeight - kTop - kBottom; }

  std::ostringstream& out() { return os_; }

  void polyline(const std::string& label, const std::string& color,
                const std::vector<std::pair<double, double>>& pts) {
    os_ << "<polyline class=\"series\" data-label=\"" << escape_xml(label)
        << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) os_ << ' ';
      os_ << num(px(pts[i].first)) << ',' << num(py(pts[i].second));
    }
    os_ << "\"/>\n";
  }

  void legend(std::size_t index, const std::string& label, const std::string& color) {
    const double x = kLeft + plot_w() + 16;
    const double y = kTop + 14 + 20.0 * static_cast<double>(index);
    os_ << "<g class=\"legend-entry\"><line x1=\"" << num(x) << "\" y1=\"" << num(y) << "\" x2=\""
        << num(x + 22) << "\" y2=\"" << num(y) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/><text x=\"" << num(x + 28) << "\" y=\"" << num(y + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(label)
        << "</text></g>\n";
  }

  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  void axes(const std::string& x_label, const std::string& y_label) {
    const double x0 = kLeft;
    const double x1 = kLeft + plot_w();
    const double y0 = kTop + plot_h();
    const double y1 = kTop;
    os_ << "<g class=\"axes\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os_ << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1)
        << "\" y2=\"" << num(y0) << "\" stroke=\"black\"/>\n";
    os_ << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0)
        << "\" y2=\"" << num(y1) << "\" stroke=\"black\"/>\n";
    for (double v : ticks(x_)) {
      const double x = px(x_.log ? std::pow(10.0, v) : v);
      os_ << "<line x1=\"" << num(x) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x)
          << "\" y2=\"" << num(y0 + 5) << "\" stroke=\"black\"/>";
      os_ << "<text x=\"" << num(x) << "\" y=\"" << num(y0 + 18) << "\" text-anchor=\"middle\">"
          << tick_label(x_.log ? std::pow(10.0, v) : v) << "</text>\n";
    }
    for (double v : ticks(y_)) {
      const double y = py(v);
      os_ << "<line x1=\"" << num(x0 - 5) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x1)
          << "\" y2=\"" << num(y) << "\" stroke=\"#dddddd\"/>";
      os_ << "<text x=\"" << num(x0 - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">"
          << tick_label(v) << "</text>\n";
    }
    os_ << "<text class=\"x-label\" x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 18)
        << "\" text-anchor=\"middle\" font-size=\"13\">" << escape_xml(x_label) << "</text>\n";
    os_ << "<text class=\"y-label\" x=\"18\" y=\"" << num((y0 + y1) / 2)
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
        << num((y0 + y1) / 2) << ")\">" << escape_xml(y_label) << "</text>\n";
    os_ << "</g>\n";
  }

  static std::vector<double> ticks(const Axis& a) {
    std::vector<double> out;
    for (double v = a.lo; v <= a.hi + 1e-9 * a.step; v += a.step) out.push_back(v);
    return out;
  }

  Axis x_;
  Axis y_;
  std::ostringstream os_;
};

}  // namespace

std::string render_error_vs_epoch(std::span<const Series> series, std::span<const int> drop_epochs,
                                  const std::string& title) {
  if (series.empty()) throw PlotError("no series to plot");
  double x_max = 0.0;
  double y_lo = 1e300;
  double y_hi = -1e300;
  for (const auto& s : series) {
    if (s.rows.empty()) throw PlotError("series '" + s.label + "' has no rows");
    for (const auto& r : s.rows) {
      x_max = std::max(x_max, static_cast<double>(r.epoch));
      y_lo = std::min(y_lo, r.test_err);
      y_hi = std::max(y_hi, r.test_err);
    }
  }
  Axis x = linear_axis(0.0, std::max(1.0, x_max), 6);
  Axis y = linear_axis(std::max(0.0, y_lo), std::min(100.0, y_hi), 6);
  Canvas c(title, "epoch", "test error (%)", x, y);
  for (int d : drop_epochs) {
    if (d < x.lo || d > x_max) continue;
    c.out() << "<line class=\"lr-drop\" data-epoch=\"" << d << "\" x1=\"" << num(c.px(d))
            << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(c.px(d)) << "\" y2=\""
            << num(kTop + c.plot_h()) << "\" stroke=\"#555555\" stroke-dasharray=\"5 4\"/>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : series[i].rows) pts.emplace_back(r.epoch, r.test_err);
    const std::string color = kPalette[i % std::size(kPalette)];
    c.polyline(series[i].label, color, pts);
    c.legend(i, series[i].label, color);
  }
  return c.finish();
}

std::string render_error_vs_size(std::span<const SizePoint> points, const std::string& title) {
  if (points.empty()) throw PlotError("no points to plot");
  std::vector<SizePoint> sorted(points.begin(), points.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const SizePoint& a, const SizePoint& b) { return a.parameters < b.parameters; });
  double p_lo = 1e300;
  double p_hi = 0.0;
  double y_lo = 1e300;
  double y_hi = -1e300;
  for (const auto& p : sorted) {
    if (p.parameters == 0) throw PlotError("point '" + p.label + "' has no parameter count");
    p_lo = std::min(p_lo, static_cast<double>(p.parameters));
    p_hi = std::max(p_hi, static_cast<double>(p.parameters));
    y_lo = std::min(y_lo, p.error);
    y_hi = std::max(y_hi, p.error);
  }
  Axis x;
  x.log = true;
  x.lo = std::floor(std::log10(p_lo));
  x.hi = std::max(x.lo + 1.0, std::ceil(std::log10(p_hi)));
  x.step = 1.0;
  Axis y = linear_axis(std::max(0.0, y_lo), std::min(100.0, y_hi), 6);
  Canvas c(title, "parameters", "test error (%)", x, y);
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : sorted) pts.emplace_back(static_cast<double>(p.parameters), p.error);
  c.polyline("final test error", kPalette[0], pts);
  for (const auto& p : sorted) {
    const double px = c.px(static_cast<double>(p.parameters));
    const double py = c.py(p.error);
    c.out() << "<circle class=\"point\" data-label=\"" << escape_xml(p.label)
            << "\" data-parameters=\"" << p.parameters << "\" cx=\"" << num(px) << "\" cy=\""
            << num(py) << "\" r=\"4\" fill=\"" << kPalette[0] << "\"/>";
    c.out() << "<text x=\"" << num(px + 6) << "\" y=\"" << num(py - 6)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(p.label)
            << "</text>\n";
  }
  c.legend(0, "final test error", kPalette[0]);
  return c.finish();
}

std::vector<SizePoint> size_points(std::span<const Series> series,
                                   std::span<const std::size_t> parameters) {
  if (series.size() != parameters.size())
    throw PlotError("need one parameter count per series");
  std::vector<SizePoint> out;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].rows.empty()) throw PlotError("series '" + series[i].label + "' has no rows");
    out.push_back({series[i].label, parameters[i], series[i].rows.back().test_err});
  }
  return out;
}

std::string RunManifest::default_run_id() const {
  return subset + "-d" + std::to_string(model.depth) + "-" + model.label() + "-" +
         to_string(model.block_form) + "-s" + std::to_string(train.seed);
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string format_run_manifest(const RunManifest& m) {
  std::ostringstream os;
  os << "run_id=" << m.run_id << "\n";
  os << "artifact_version=" << m.artifact_version << "\n";
  os << "subset=" << m.subset << "\n";
  os << "depth=" << m.model.depth << "\n";
  os << "cardinality=" << m.model.cardinality << "\n";
  os << "base_width=" << m.model.base_width << "\n";
  os << "num_classes=" << m.model.num_classes << "\n";
  os << "block_form=" << to_string(m.model.block_form) << "\n";
  os << "epochs=" << m.train.epochs << "\n";
  os << "batch_size=" << m.train.batch_size << "\n";
  os << "base_lr=" << real(m.train.base_lr) << "\n";
  os << "lr_drop_epochs=" << join_ints(m.train.lr_drop_epochs) << "\n";
  os << "lr_drop_factor=" << real(m.train.lr_drop_factor) << "\n";
  os << "momentum=" << real(m.train.momentum) << "\n";
  os << "weight_decay=" << real(m.train.weight_decay) << "\n";
  os << "seed=" << m.train.seed << "\n";
  os << "threads=" << m.threads << "\n";
  os << "limit_train=" << m.limit_train << "\n";
  os << "limit_test=" << m.limit_test << "\n";
  os << "record_wall_time=" << (m.record_wall_time ? 1 : 0) << "\n";
  os << "data_dir=" << m.data_dir << "\n";
  os << "out_dir=" << m.out_dir << "\n";
  for (const auto& [key, path] : m.files) os << "file." << key << "=" << path << "\n";
  return os.str();
}

RunManifest parse_run_manifest(const std::string& text) {
  RunManifest m;
  m.train.lr_drop_epochs.clear();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + " has no '='");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "run_id") m.run_id = value;
      else if (key == "artifact_version") m.artifact_version = value;
      else if (key == "subset") m.subset = value;
      else if (key == "depth") m.model.depth = std::stoi(value);
      else if (key == "cardinality") m.model.cardinality = std::stoi(value);
      else if (key == "base_width") m.model.base_width = std::stoi(value);
      else if (key == "num_classes") m.model.num_classes = std::stoi(value);
      else if (key == "block_form") m.model.block_form = parse_block_form(value);
      else if (key == "epochs") m.train.epochs = std::stoi(value);
      else if (key == "batch_size") m.train.batch_size = std::stoul(value);
      else if (key == "base_lr") m.train.base_lr = std::stod(value);
      else if (key == "lr_drop_epochs") {
        std::stringstream ss(value);
        std::string cell;
        while (std::getline(ss, cell, ','))
          if (!cell.empty()) m.train.lr_drop_epochs.push_back(std::stoi(cell));
      } else if (key == "lr_drop_factor") m.train.lr_drop_factor = std::stod(value);
      else if (key == "momentum") m.train.momentum = std::stod(value);
      else if (key == "weight_decay") m.train.weight_decay = std::stod(value);
      else if (key == "seed") m.train.seed = std::stoull(value);
      else if (key == "threads") m.threads = std::stoul(value);
      else if (key == "limit_train") m.limit_train = std::stoul(value);
      else if (key == "limit_test") m.limit_test = std::stoul(value);
      else if (key == "record_wall_time") m.record_wall_time = value != "0";
      else if (key == "data_dir") m.data_dir = value;
      else if (key == "out_dir") m.out_dir = value;
      else if (key.rfind("file.", 0) == 0) m.files[key.substr(5)] = value;
      else throw std::runtime_error("unknown manifest key '" + key + "'");
    } catch (const std::logic_error&) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": bad value for '" +
                               key + "'");
    }
  }
  return m;
}

RunManifest read_run_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_manifest(ss.str());
}

SweepAxis sweep_axis(const SweepGrid& grid) {
  if (grid.depths.empty() || grid.cardinalities.empty() || grid.base_widths.empty()) {
    throw ConfigError("sweep grid needs at least one value on every axis");
  }
  int varying = 0;
  SweepAxis axis = SweepAxis::none;
  if (grid.depths.size() > 1) ++varying, axis = SweepAxis::depth;
  if (grid.cardinalities.size() > 1) ++varying, axis = SweepAxis::cardinality;
  if (grid.base_widths.size() > 1) ++varying, axis = SweepAxis::base_width;
  if (varying > 1) {
    throw ConfigError(
        "sweep grid varies more than one axis; vary one of depth, cardinality or base width and "
        "hold the others fixed");
  }
  return axis;
}

std::vector<ModelConfig> expand_sweep(const SweepGrid& grid, const ModelConfig& base) {
  sweep_axis(grid);
  std::vector<ModelConfig> out;
  for (int depth : grid.depths)
    for (int c : grid.cardinalities)
      for (int d : grid.base_widths) {
        ModelConfig cfg = base;
        cfg.depth = depth;
        cfg.cardinality = c;
        cfg.base_width = d;
        validate_config(cfg);
        out.push_back(cfg);
      }
  return out;
}

namespace {

Split head(const Split& s, std::size_t limit) {
  if (limit == 0 || limit >= s.size()) return s;
  Split out;
  out.labels.assign(s.labels.begin(), s.labels.begin() + static_cast<std::ptrdiff_t>(limit));
  out.sources.assign(s.sources.begin(), s.sources.begin() + static_cast<std::ptrdiff_t>(limit));
  out.pixels.assign(s.pixels.begin(),
                    s.pixels.begin() + static_cast<std::ptrdiff_t>(limit * kImageBytes));
  return out;
}

}  // namespace

Dataset limit_dataset(Dataset data, std::size_t limit_train, std::size_t limit_test) {
  data.train = head(data.train, limit_train);
  data.test = head(data.test, limit_test);
  return data;
}

ExperimentResult run_experiment(RunManifest manifest, bool resume,
                                const std::function<void(const MetricsRow&)>& on_epoch) {
  validate_config(manifest.model);
  manifest.train.validate();
  if (manifest.threads == 0) throw std::invalid_argument("threads must be positive");
  if (manifest.data_dir.empty()) throw DataError("no data directory given");
  if (manifest.out_dir.empty()) throw std::invalid_argument("no output directory given");
  if (manifest.run_id.empty()) manifest.run_id = manifest.default_run_id();
  omp_set_num_threads(static_cast<int>(manifest.threads));

  const SubsetSpec spec = parse_subset(manifest.subset);
  if (static_cast<std::size_t>(manifest.model.num_classes) != spec.num_classes()) {
    throw ConfigError("model has " + std::to_string(manifest.model.num_classes) +
                      " classes but " + spec.label() + " has " +
                      std::to_string(spec.num_classes()));
  }
  Dataset data = build_subset(load_cifar_dir(manifest.data_dir), spec);
  data = limit_dataset(std::move(data), manifest.limit_train, manifest.limit_test);

  const std::filesystem::path run_dir = std::filesystem::path(manifest.out_dir) / manifest.run_id;
  std::filesystem::create_directories(run_dir);
  manifest.files["subset_manifest"] = "subset.txt";
  manifest.files["metrics"] = "metrics.csv";
  manifest.files["checkpoint"] = "checkpoint.bin";
  manifest.files["plot"] = "error_vs_epoch.svg";
  manifest.files["manifest"] = "run.manifest";
  write_file_atomic(run_dir / manifest.files["subset_manifest"], subset_manifest(data));

  const auto ckpt_path = run_dir / manifest.files["checkpoint"];
  TrainState state;
  if (resume && std::filesystem::exists(ckpt_path)) {
    state = load_checkpoint(ckpt_path);
    check_resume_config(state, manifest.model);
    if (!(state.train_config == manifest.train)) {
      throw CheckpointError("checkpoint training recipe differs from the requested run");
    }
  } else {
    state = make_train_state(manifest.model, manifest.train, compute_norm_stats(data.train));
  }
  // Listed before training so an interrupted run can be relaunched from it.
  write_file_atomic(run_dir / manifest.files["manifest"], format_run_manifest(manifest));

  RunOptions opts;
  opts.metrics_path = run_dir / manifest.files["metrics"];
  opts.checkpoint_path = ckpt_path;
  opts.record_wall_time = manifest.record_wall_time;
  opts.on_epoch = on_epoch;
  run_training(state, data, opts);

  if (!state.history.empty()) {
    const Series s{manifest.model.label(), state.history};
    write_file_atomic(run_dir / manifest.files["plot"],
                      render_error_vs_epoch(std::span<const Series>(&s, 1),
                                            manifest.train.lr_drop_epochs,
                                            manifest.run_id));
  }
  return {std::move(state), run_dir};
}

}  // namespace resnext

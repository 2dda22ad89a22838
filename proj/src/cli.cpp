#include "resnext/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "resnext/equivalence.hpp"
#include "resnext/report.hpp"

namespace resnext {

namespace {

struct ModelFlags {
  int depth = 29;
  int cardinality = 8;
  int base_width = 64;
  int classes = 10;
  std::string block_form = "grouped";

  void add(CLI::App* app, bool with_classes) {
    app->add_option("--depth", depth, "Network depth; (depth - 2) % 9 == 0")->capture_default_str();
    app->add_option("--cardinality", cardinality, "Paths per block (C)")->capture_default_str();
    app->add_option("--base-width", base_width, "Per-path width in the first stage (d)")
        ->capture_default_str();
    if (with_classes)
      app->add_option("--classes", classes, "Number of output classes")->capture_default_str();
    app->add_option("--block-form", block_form, "split | concat | grouped")->capture_default_str();
  }

  ModelConfig config() const {
    ModelConfig c;
    c.depth = depth;
    c.cardinality = cardinality;
    c.base_width = base_width;
    c.num_classes = classes;
    c.block_form = parse_block_form(block_form);
    return c;
  }
};

struct RecipeFlags {
  std::string subset = "cifar2";
  int epochs = 300;
  std::size_t batch_size = 128;
  double lr = 0.1;
  std::vector<int> drops = {150, 225};
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t limit_train = 0;
  std::size_t limit_test = 0;
  bool no_timing = false;
  std::string data_dir;
  std::string out_dir = "runs";

  void add(CLI::App* app) {
    app->add_option("--subset", subset, "cifar2 | cifar5 | cifar10")->capture_default_str();
    app->add_option("--epochs", epochs)->capture_default_str();
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--lr", lr, "Initial learning rate")->capture_default_str();
    app->add_option("--lr-drops", drops, "Epochs (zero-based) where the rate drops by 10x")
        ->delimiter(',')
        ->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
    app->add_option("--threads", threads, "OpenMP threads; 1 gives bitwise-reproducible runs")
        ->capture_default_str();
    app->add_option("--limit-train", limit_train, "Keep only the first N training examples");
    app->add_option("--limit-test", limit_test, "Keep only the first N test examples");
    app->add_flag("--no-timing", no_timing, "Write wall_sec = 0 so metrics files are reproducible");
    app->add_option("--data-dir", data_dir, "Directory with the CIFAR-10 binary files");
    app->add_option("--out-dir", out_dir, "Artifact directory")->capture_default_str();
  }

  RunManifest manifest(const ModelConfig& model) const {
    RunManifest m;
    m.subset = parse_subset(subset).label();
    m.model = model;
    m.model.num_classes = static_cast<int>(parse_subset(subset).num_classes());
    m.train.epochs = epochs;
    m.train.batch_size = batch_size;
    m.train.base_lr = lr;
    m.train.lr_drop_epochs.clear();
    for (int d : drops)
      if (d < epochs) m.train.lr_drop_epochs.push_back(d);
    m.train.seed = seed;
    m.threads = threads;
    m.limit_train = limit_train;
    m.limit_test = limit_test;
    m.record_wall_time = !no_timing;
    m.data_dir = data_dir;
    m.out_dir = out_dir;
    return m;
  }
};

void print_row(std::ostream& out, const MetricsRow& r) {
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "epoch %3d  lr %.4g  train_loss %.4f  train_acc %6.2f%%  test_loss %.4f  "
                "test_err %6.2f%%  %.1fs\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_loss, r.test_err, r.wall_sec);
  out << buf << std::flush;
}

std::pair<std::string, std::string> split_pair(const std::string& s, const char* flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    throw std::invalid_argument(std::string(flag) + " expects label=value, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

int cmd_prepare(const std::string& data_dir, const std::string& out_dir,
                const std::vector<std::string>& subsets, std::ostream& out) {
  if (data_dir.empty()) throw DataError("prepare needs --data-dir");
  const CifarArchive archive = load_cifar_dir(data_dir);
  out << "read " << archive.train.size() << " training and " << archive.test.size()
      << " test records\n";
  std::filesystem::create_directories(out_dir);
  for (const auto& name : subsets) {
    const Dataset d = build_subset(archive, parse_subset(name));
    const auto path = std::filesystem::path(out_dir) / (d.spec.label() + ".manifest.txt");
    write_file_atomic(path, subset_manifest(d));
    out << d.spec.label() << ": " << d.train.size() << " train, " << d.test.size() << " test -> "
        << path.string() << "\n";
  }
  return 0;
}

int cmd_train(RunManifest m, bool resume, std::ostream& out) {
  if (m.run_id.empty()) m.run_id = m.default_run_id();
  out << "run " << m.run_id << " (" << m.model.label() << ", depth " << m.model.depth << ", "
      << to_string(m.model.block_form) << ", " << m.subset << ", " << m.train.epochs
      << " epochs)\n";
  const auto result = run_experiment(m, resume, [&out](const MetricsRow& r) { print_row(out, r); });
  out << "artifacts in " << result.run_dir.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& subset,
             std::size_t limit_test, std::ostream& out) {
  TrainState state = load_checkpoint(checkpoint);
  if (data_dir.empty()) throw DataError("eval needs --data-dir");
  const SubsetSpec spec = parse_subset(subset);
  if (static_cast<std::size_t>(state.model_config.num_classes) != spec.num_classes()) {
    throw ConfigError("checkpoint model has " + std::to_string(state.model_config.num_classes) +
                      " classes, " + spec.label() + " has " + std::to_string(spec.num_classes()));
  }
  Dataset d = limit_dataset(build_subset(load_cifar_dir(data_dir), spec), 0, limit_test);
  const EvalResult r = evaluate(state.model, d.test, state.norm, state.train_config.batch_size);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "test_loss %.6f test_err %.2f%% (%zu images, epoch %d)\n",
                r.loss, r.error, d.test.size(), state.next_epoch);
  out << buf;
  return 0;
}

int cmd_verify(const ModelConfig& cfg, const std::string& precision, double tolerance,
               std::uint64_t seed, std::size_t spatial, std::ostream& out) {
  EquivalenceReport report;
  if (precision == "float") {
    if (tolerance < 0) tolerance = 1e-4;
    report = check_block_forms<float>(cfg, seed, 2, spatial);
  } else if (precision == "double") {
    if (tolerance < 0) tolerance = 1e-8;
    report = check_block_forms<double>(cfg, seed, 2, spatial);
  } else {
    throw std::invalid_argument("--precision must be float or double");
  }
  out << "config " << cfg.label() << " depth " << cfg.depth << " (" << precision << ")\n";
  out << format_equivalence(report);
  const bool ok = report.within(tolerance);
  out << (ok ? "PASS" : "FAIL") << " tolerance " << tolerance << "\n";
  return ok ? 0 : 1;
}

int cmd_count(const ModelConfig& cfg, std::ostream& out) {
  validate_config(cfg);
  Rng rng(0);
  const Model<float> model = build_model<float>(cfg, rng);
  out << count_parameters(model) << "\n";
  out << format_summary(summarize(model));
  return 0;
}

int cmd_plot(const std::string& kind, const std::vector<std::string>& series_flags,
             const std::vector<std::string>& param_flags, const std::vector<int>& drops,
             const std::string& out_path, const std::string& title, std::ostream& out) {
  if (series_flags.empty()) throw PlotError("plot needs at least one --series label=metrics.csv");
  std::vector<Series> series;
  for (const auto& s : series_flags) {
    auto [label, path] = split_pair(s, "--series");
    series.push_back({label, read_metrics_csv(path)});
  }
  std::string svg;
  if (kind == "error-vs-epoch") {
    svg = title.empty() ? render_error_vs_epoch(series, drops)
                        : render_error_vs_epoch(series, drops, title);
  } else if (kind == "error-vs-size") {
    std::vector<std::size_t> params(series.size(), 0);
    for (const auto& p : param_flags) {
      auto [label, value] = split_pair(p, "--params");
      auto it = std::find_if(series.begin(), series.end(),
                             [&label](const Series& s) { return s.label == label; });
      if (it == series.end()) throw PlotError("--params names unknown series '" + label + "'");
      params[static_cast<std::size_t>(it - series.begin())] = std::stoull(value);
    }
    for (std::size_t i = 0; i < series.size(); ++i)
      if (params[i] == 0) throw PlotError("series '" + series[i].label + "' needs --params");
    const auto pts = size_points(series, params);
    svg = title.empty() ? render_error_vs_size(pts) : render_error_vs_size(pts, title);
  } else {
    throw PlotError("unknown plot kind '" + kind + "' (error-vs-epoch | error-vs-size)");
  }
  if (out_path.empty()) throw PlotError("plot needs --out");
  if (auto parent = std::filesystem::path(out_path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  write_file_atomic(out_path, svg);
  out << "wrote " << out_path << "\n";
  return 0;
}

const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::depth:
      return "depth";
    case SweepAxis::cardinality:
      return "cardinality";
    case SweepAxis::base_width:
      return "base-width";
    case SweepAxis::none:
      break;
  }
  return "single";
}

int cmd_sweep(const SweepGrid& grid, const ModelConfig& base, const RecipeFlags& recipe,
              std::ostream& out) {
  const SweepAxis axis = sweep_axis(grid);
  const auto configs = expand_sweep(grid, base);
  std::vector<Series> series;
  std::vector<std::size_t> params;
  std::string listing;
  for (const auto& cfg : configs) {
    RunManifest m = recipe.manifest(cfg);
    m.run_id = m.default_run_id();
    const int code = cmd_train(m, false, out);
    if (code != 0) return code;
    const TrainState state = load_checkpoint(std::filesystem::path(m.out_dir) / m.run_id /
                                             "checkpoint.bin");
    const std::string label =
        axis == SweepAxis::depth ? "d" + std::to_string(cfg.depth) + " " + cfg.label()
                                 : cfg.label();
    series.push_back({label, state.history});
    params.push_back(count_parameters(state.model));
    listing += m.run_id + "/run.manifest\n";
  }
  const std::filesystem::path dir = recipe.out_dir;
  const std::string stem = std::string("sweep-") + axis_name(axis);
  write_file_atomic(dir / (stem + ".runs"), listing);
  std::vector<int> drops;
  for (int d : recipe.drops)
    if (d < recipe.epochs) drops.push_back(d);
  write_file_atomic(dir / (stem + "-error-vs-epoch.svg"), render_error_vs_epoch(series, drops));
  write_file_atomic(dir / (stem + "-error-vs-size.svg"),
                    render_error_vs_size(size_points(series, params)));
  out << "sweep over " << axis_name(axis) << ": " << configs.size() << " runs, plots in "
      << dir.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ResNeXt on CIFAR-10 subsets"};
  app.require_subcommand(1);

  std::string data_dir;
  std::string out_dir = "runs";

  auto* prepare = app.add_subcommand("prepare", "Build subset manifests from raw CIFAR-10 files");
  std::vector<std::string> subsets = {"cifar2", "cifar5", "cifar10"};
  prepare->add_option("--data-dir", data_dir)->required();
  prepare->add_option("--out-dir", out_dir)->capture_default_str();
  prepare->add_option("--subset", subsets, "Subsets to build")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train one configuration");
  ModelFlags train_model;
  RecipeFlags recipe;
  std::string run_id;
  std::string manifest_path;
  bool resume = false;
  train_model.add(train, false);
  recipe.add(train);
  train->add_option("--run-id", run_id, "Defaults to a name derived from the configuration");
  train->add_flag("--resume", resume, "Continue from the run's checkpoint if present");
  train->add_option("--manifest", manifest_path, "Relaunch the run described by a run manifest");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a subset's test split");
  std::string checkpoint;
  std::string eval_subset = "cifar2";
  std::size_t eval_limit = 0;
  std::size_t eval_threads = 1;
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data-dir", data_dir)->required();
  eval->add_option("--subset", eval_subset)->capture_default_str();
  eval->add_option("--limit-test", eval_limit);
  eval->add_option("--threads", eval_threads)->capture_default_str();

  auto* verify = app.add_subcommand("verify-blocks", "Check split/concat/grouped equivalence");
  ModelFlags verify_model;
  std::string precision = "float";
  double tolerance = -1.0;
  std::uint64_t verify_seed = 1;
  std::size_t spatial = 8;
  verify_model.add(verify, true);
  verify->add_option("--precision", precision, "float | double")->capture_default_str();
  verify->add_option("--tolerance", tolerance, "Default 1e-4 (float) or 1e-8 (double)");
  verify->add_option("--seed", verify_seed)->capture_default_str();
  verify->add_option("--spatial", spatial, "Input height and width")->capture_default_str();

  auto* count = app.add_subcommand("count-params", "Print the learnable-scalar count");
  ModelFlags count_model;
  count_model.add(count, true);

  auto* plot = app.add_subcommand("plot", "Render SVG plots from metrics CSVs");
  std::string kind = "error-vs-epoch";
  std::vector<std::string> series_flags;
  std::vector<std::string> param_flags;
  std::vector<int> plot_drops = {150, 225};
  std::string plot_out;
  std::string title;
  plot->add_option("--kind", kind, "error-vs-epoch | error-vs-size")->capture_default_str();
  plot->add_option("--series", series_flags, "label=metrics.csv (repeatable)")->required();
  plot->add_option("--params", param_flags, "label=parameter-count (error-vs-size)");
  plot->add_option("--drop-epochs", plot_drops)->delimiter(',')->capture_default_str();
  plot->add_option("--out", plot_out)->required();
  plot->add_option("--title", title);

  auto* sweep = app.add_subcommand("sweep", "Train a grid varying one hyper-parameter");
  SweepGrid grid{{29}, {8}, {64}};
  std::string sweep_form = "grouped";
  RecipeFlags sweep_recipe;
  sweep->add_option("--depth", grid.depths)->delimiter(',')->capture_default_str();
  sweep->add_option("--cardinality", grid.cardinalities)->delimiter(',')->capture_default_str();
  sweep->add_option("--base-width", grid.base_widths)->delimiter(',')->capture_default_str();
  sweep->add_option("--block-form", sweep_form)->capture_default_str();
  sweep_recipe.add(sweep);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(data_dir, out_dir, subsets, out);
    if (train->parsed()) {
      RunManifest m;
      if (!manifest_path.empty()) {
        for (const char* flag : {"--depth", "--cardinality", "--base-width", "--block-form",
                                 "--subset", "--epochs", "--batch-size", "--lr", "--lr-drops",
                                 "--seed", "--limit-train", "--limit-test", "--no-timing",
                                 "--run-id"}) {
          if (train->count(flag) > 0) {
            throw std::invalid_argument(std::string(flag) + " cannot be combined with --manifest");
          }
        }
        m = read_run_manifest(manifest_path);
        if (train->count("--data-dir") > 0) m.data_dir = recipe.data_dir;
        if (train->count("--out-dir") > 0) m.out_dir = recipe.out_dir;
        if (train->count("--threads") > 0) m.threads = recipe.threads;
        m.files.clear();
      } else {
        m = recipe.manifest(train_model.config());
        m.run_id = run_id;
      }
      return cmd_train(m, resume, out);
    }
    if (eval->parsed()) {
      omp_set_num_threads(static_cast<int>(std::max<std::size_t>(1, eval_threads)));
      return cmd_eval(checkpoint, data_dir, eval_subset, eval_limit, out);
    }
    if (verify->parsed()) {
      return cmd_verify(verify_model.config(), precision, tolerance, verify_seed, spatial, out);
    }
    if (count->parsed()) return cmd_count(count_model.config(), out);
    if (plot->parsed()) {
      return cmd_plot(kind, series_flags, param_flags, plot_drops, plot_out, title, out);
    }
    if (sweep->parsed()) {
      ModelConfig base;
      base.block_form = parse_block_form(sweep_form);
      return cmd_sweep(grid, base, sweep_recipe, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace resnext

// Command-line front end: prune, train, run, sweep, check-grad, report.

#include <deque>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prospr/error.hpp"
#include "prospr/experiment.hpp"

namespace fs = std::filesystem;
using prospr::cli::ExperimentConfig;
using prospr::cli::Settings;

namespace {

enum Exit { ok = 0, usage = 1, runtime = 2, grad_check_failed = 3 };

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  bool force = false;
  // (settings key, value); a deque so the options' pointers stay valid
  std::deque<std::pair<std::string, std::optional<std::string>>> values;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    values.emplace_back(key, std::nullopt);
    app->add_option(flag, values.back().second, help);
  }
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "key = value config file; flags override it")->check(CLI::ExistingFile);
  f.add(app, "--data-dir", "data_dir", "directory with the dataset files");
  f.add(app, "--out", "out", "output directory");
  f.add(app, "--seed", "seed", "experiment seed");
  f.add(app, "--criterion", "criterion", "prospr | prospr-fo | snip | magnitude | random");
  f.add(app, "--sparsity", "sparsity", "percent of prunable entries removed, e.g. 95");
  f.add(app, "--density", "density", "fraction of prunable entries kept");
  f.add(app, "--meta-steps", "prune.meta_steps", "unrolled SGD steps M");
  f.add(app, "--meta-lr", "prune.meta_lr", "inner learning rate of the unrolled steps");
  f.add(app, "--meta-batch-size", "prune.meta_batch_size", "batch size while scoring");
  f.add(app, "--sampler", "prune.sampler", "shuffled | class-balanced | fixed-single-batch");
  f.add(app, "--granularity", "granularity", "unstructured | structured");
  f.add(app, "--init-weights", "init_weights", "checkpoint with the initial weights");
  f.add(app, "--model", "model", "mlp | mlp:<w0>-<w1>-... | conv6");
  f.add(app, "--dataset", "dataset", "mnist | cifar10 | synthetic");
  f.add(app, "--epochs", "train.epochs", "training epochs");
  app->add_option("--set", f.sets, "extra setting section.key=value (repeatable)");
  app->add_flag("--force", f.force, "overwrite existing artifacts");
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig cfg;
  if (!f.config.empty()) cfg = prospr::cli::apply_settings(cfg, prospr::cli::read_settings(f.config));
  Settings overrides;
  for (const auto& [key, value] : f.values) {
    if (value) overrides[key] = *value;
  }
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw prospr::ConfigError("--set expects key=value, got '" + s + "'");
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (overrides.count("sparsity") && overrides.count("density")) {
    throw prospr::ConfigError("give either --sparsity or --density, not both");
  }
  cfg = prospr::cli::apply_settings(cfg, overrides);
  cfg.force = f.force;
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pruning at initialization with meta-gradients through unrolled SGD"};
  app.require_subcommand(1);

  Flags prune_f, train_f, run_f, sweep_f, check_f;
  auto* prune = app.add_subcommand("prune", "score the initial weights and write a mask");
  add_common(prune, prune_f);

  auto* train = app.add_subcommand("train", "train the masked initial weights");
  add_common(train, train_f);
  std::string mask_path, init_path, train_results;
  train->add_option("--mask", mask_path, "mask file (default <out>/mask.prmask)");
  train->add_option("--init", init_path, "initial weights (default <out>/init.ckpt)");
  train->add_option("--results", train_results, "results CSV to append to (default <out>/results.csv)");

  auto* run = app.add_subcommand("run", "prune then train");
  add_common(run, run_f);
  std::string run_results;
  run->add_option("--results", run_results, "results CSV to append to (default <out>/results.csv)");

  auto* sweep = app.add_subcommand("sweep", "one run per value of an axis");
  add_common(sweep, sweep_f);
  std::string axis, axis_values;
  sweep->add_option("--axis", axis, "sparsity-grid | M | criterion | seed")->required();
  sweep->add_option("--values", axis_values, "comma-separated axis values (default: the axis' standard set)");

  auto* check = app.add_subcommand("check-grad", "compare the exact meta-gradient with finite differences");
  add_common(check, check_f);
  check_f.add(check, "--entries", "check.entries", "mask entries to check (0 = all)");
  check_f.add(check, "--fd-step", "check.step", "finite-difference step");
  check_f.add(check, "--tol", "check.tolerance", "maximum relative error");

  auto* report = app.add_subcommand("report", "summarize results.csv");
  std::string report_dir = ".";
  report->add_option("dir", report_dir, "run or sweep directory, or a results.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*report) {
      prospr::cli::cmd_report(report_dir, std::cout);
      return ok;
    }
    const Flags& f = *prune ? prune_f : *train ? train_f : *run ? run_f : *sweep ? sweep_f : check_f;
    const ExperimentConfig cfg = resolve(f);
    cfg.validate();
    const auto data = prospr::cli::load_datasets(cfg);
    if (*prune) {
      prospr::cli::cmd_prune(cfg, data, std::cout);
    } else if (*train) {
      prospr::cli::cmd_train(cfg, data, mask_path.empty() ? cfg.out_dir / "mask.prmask" : fs::path(mask_path),
                             init_path.empty() ? cfg.out_dir / "init.ckpt" : fs::path(init_path),
                             train_results.empty() ? cfg.out_dir / "results.csv" : fs::path(train_results), std::cout);
    } else if (*run) {
      prospr::cli::cmd_run(cfg, data, run_results.empty() ? cfg.out_dir / "results.csv" : fs::path(run_results),
                           std::cout);
    } else if (*sweep) {
      prospr::cli::cmd_sweep(cfg, prospr::cli::parse_axis(axis), split_list(axis_values), data, std::cout);
      prospr::cli::cmd_report(cfg.out_dir, std::cout);
    } else {
      return prospr::cli::cmd_check_grad(cfg, data, std::cout).passed ? ok : grad_check_failed;
    }
    return ok;
  } catch (const prospr::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime;
  }
}

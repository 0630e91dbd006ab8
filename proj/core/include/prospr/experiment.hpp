#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prospr/data.hpp"
#include "prospr/mask.hpp"
#include "prospr/oracle.hpp"
#include "prospr/pruning.hpp"
#include "prospr/trainer.hpp"

namespace prospr::cli {

enum class DatasetKind { mnist, cifar10, synthetic };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset(const std::string& name);

/// The sparsity levels (percent) of the standard comparison grid.
const std::vector<double>& sparsity_grid();

struct ExperimentConfig {
  std::string model = "mlp";
  DatasetKind dataset = DatasetKind::mnist;
  std::filesystem::path data_dir;
  data::SyntheticConfig synthetic;

  pruning::Criterion criterion = pruning::Criterion::prospr;
  std::size_t meta_steps = 3;
  double meta_lr = 0.1;
  std::size_t meta_batch_size = 512;
  data::SamplerMode sampler = data::SamplerMode::shuffled;
  double density = 0.05;
  Granularity granularity = Granularity::per_weight;

  train::TrainConfig train;
  bool lr_drops_explicit = false;  // otherwise derived from the epoch count

  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";
  std::optional<std::filesystem::path> init_weights;
  bool force = false;

  std::size_t check_entries = 64;
  double check_step = 1e-3;  // shrinks per entry near ReLU kinks
  double check_tolerance = 1e-4;

  /// Lets prospr/prospr-fo run with zero unroll steps. Not reachable from
  /// configuration files or flags.
  bool allow_zero_steps = false;

  /// Throws ConfigError naming every offending setting.
  void validate() const;
  double sparsity_percent() const { return 100.0 * (1.0 - density); }

  /// `train` with the learning-rate drops filled in when not given
  /// explicitly.
  train::TrainConfig training() const;

  // Independent streams derived from `seed`.
  std::uint64_t init_seed() const;
  std::uint64_t sampler_seed() const;
  std::uint64_t random_seed() const;
  std::uint64_t train_seed() const;
};

/// Flat "section.key" -> value settings.
using Settings = std::map<std::string, std::string>;

/// key = value lines; "[section]" headers prefix later keys with
/// "section."; '#' and ';' start comments.
Settings parse_settings(const std::string& text, const std::string& origin = "config");
Settings read_settings(const std::filesystem::path& path);

/// Applies settings on top of `base`. Unknown keys and malformed values are
/// collected and reported together in one ConfigError.
ExperimentConfig apply_settings(ExperimentConfig base, const Settings& settings);

/// Every setting of `cfg` in canonical form; apply_settings of the result
/// reproduces `cfg`.
Settings to_settings(const ExperimentConfig& cfg);
std::string format_settings(const Settings& settings);

/// Keys accepted by apply_settings.
const std::vector<std::string>& known_keys();

struct Datasets {
  data::Dataset train;
  data::Dataset test;
};

Datasets load_datasets(const ExperimentConfig& cfg);
nn::Model build_model(const ExperimentConfig& cfg, const data::Dataset& train);

struct PruneOutcome {
  pruning::SaliencyReport report;
  Mask mask;
  pruning::LayerCollapseReport collapse;
  std::filesystem::path mask_path;
  std::filesystem::path init_path;
  std::filesystem::path report_path;
};

struct RunRecord {
  std::string run_id;
  Settings config;
  pruning::Criterion criterion = pruning::Criterion::prospr;
  std::optional<double> prune_seconds;
  bool collapse = false;
  std::vector<pruning::LayerCollapseReport::Layer> layers;
  double density = 0.0;  // retained fraction of the mask file
  train::RunMetrics metrics;
  std::string started;
  std::string finished;
  std::map<std::string, std::filesystem::path> artifacts;
};

/// Scores, selects the top-k mask and writes mask.prmask, init.ckpt,
/// saliency.json, scores.f64 and config.ini into cfg.out_dir.
PruneOutcome cmd_prune(const ExperimentConfig& cfg, const Datasets& data, std::ostream& log);

/// Trains the masked initial weights and writes final.ckpt and run.json;
/// appends one row to `results_csv`.
RunRecord cmd_train(const ExperimentConfig& cfg, const Datasets& data, const std::filesystem::path& mask_path,
                    const std::filesystem::path& init_path, const std::filesystem::path& results_csv,
                    std::ostream& log);

/// cmd_prune followed by cmd_train on its artifacts.
RunRecord cmd_run(const ExperimentConfig& cfg, const Datasets& data, const std::filesystem::path& results_csv,
                  std::ostream& log);

enum class SweepAxis { sparsity, meta_steps, criterion, seed };

SweepAxis parse_axis(const std::string& name);
std::string to_string(SweepAxis axis);
std::vector<std::string> default_axis_values(SweepAxis axis);

/// One full run per axis value in cfg.out_dir/<axis>-<value>; rows go to
/// cfg.out_dir/results.csv and per-group mean/std to summary.csv.
std::vector<RunRecord> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, std::vector<std::string> values,
                                 const Datasets& data, std::ostream& log);

/// Exact meta-gradient against finite differences over sampled mask entries.
oracle::GradCheckReport cmd_check_grad(const ExperimentConfig& cfg, const Datasets& data, std::ostream& log);

/// Prints results.csv of `dir` and the grouped summary.
void cmd_report(const std::filesystem::path& dir, std::ostream& out);

/// The header of results.csv.
const std::vector<std::string>& results_columns();

struct SummaryRow {
  std::string criterion;
  std::string meta_steps;
  std::string density;
  std::string granularity;
  std::size_t runs = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // sample standard deviation; 0 for a single run
};

/// Groups results.csv rows by criterion, M, density and granularity.
std::vector<SummaryRow> summarize(const std::filesystem::path& results_csv);

}  // namespace prospr::cli

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "prospr/error.hpp"
#include "prospr/experiment.hpp"

using namespace prospr;
using testutil::read_bytes;
using testutil::TempDir;

namespace {

// Ten Gaussian clusters in 20 dimensions and a small MLP: every command runs
// in well under a second.
cli::ExperimentConfig small_config(const std::filesystem::path& out) {
  cli::ExperimentConfig cfg;
  cfg.model = "mlp:20-16-10";
  cfg.dataset = cli::DatasetKind::synthetic;
  cfg.synthetic.per_category = 30;
  cfg.meta_batch_size = 64;
  cfg.density = 0.3;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 32;
  cfg.out_dir = out;
  return cfg;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("settings files: sections, comments and overrides") {
  const auto s = cli::parse_settings(
      "# experiment\n"
      "model = mlp:784-300-100-10\n"
      "sparsity = 95   ; percent\n"
      "\n"
      "[prune]\n"
      "meta_steps = 2\n"
      "sampler = fixed-single-batch\n"
      "[train]\n"
      "lr_drops = 3, 6\n");
  CHECK(s.at("model") == "mlp:784-300-100-10");
  CHECK(s.at("prune.meta_steps") == "2");
  CHECK(s.at("train.lr_drops") == "3, 6");

  auto cfg = cli::apply_settings({}, s);
  CHECK(cfg.density == doctest::Approx(0.05));
  CHECK(pruning::retained_count(cfg.density, 266200) == 13310);
  CHECK(cfg.meta_steps == 2);
  CHECK(cfg.sampler == data::SamplerMode::fixed_single_batch);
  CHECK(cfg.train.lr_drop_epochs == std::vector<std::size_t>{3, 6});
  CHECK(cfg.lr_drops_explicit);

  // Later layers (command-line flags) win.
  cfg = cli::apply_settings(cfg, {{"prune.meta_steps", "3"}, {"seed", "9"}});
  CHECK(cfg.meta_steps == 3);
  CHECK(cfg.seed == 9);
}

TEST_CASE("bad settings are reported together") {
  try {
    cli::apply_settings({}, {{"modle", "mlp"}, {"train.epochz", "3"}, {"prune.meta_lr", "fast"}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("modle") != std::string::npos);
    CHECK(msg.find("train.epochz") != std::string::npos);
    CHECK(msg.find("prune.meta_lr") != std::string::npos);
  }
  CHECK_THROWS_AS(cli::apply_settings({}, {{"sparsity", "95"}, {"density", "0.05"}}), ConfigError);
  CHECK_THROWS_AS(cli::apply_settings({}, {{"sparsity", "100"}}), ConfigError);
  CHECK_THROWS_AS(cli::parse_settings("just words\n"), ConfigError);

  cli::ExperimentConfig cfg;
  cfg.data_dir = "x";
  cfg.meta_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.allow_zero_steps = true;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("settings round-trip through text") {
  cli::ExperimentConfig cfg;
  cfg.model = "conv6";
  cfg.dataset = cli::DatasetKind::cifar10;
  cfg.data_dir = "/data/cifar";
  cfg.density = 1.0 - 0.982;
  cfg.meta_lr = 0.037;
  cfg.granularity = Granularity::per_channel;
  cfg.train.lr_drop_epochs = {100, 150};
  cfg.lr_drops_explicit = true;
  cfg.train.augment = true;
  cfg.seed = 12345678901234ULL;
  const std::string text = cli::format_settings(cli::to_settings(cfg));
  const auto back = cli::apply_settings({}, cli::parse_settings(text));
  CHECK(cli::to_settings(back) == cli::to_settings(cfg));
  CHECK(back.density == cfg.density);
  CHECK(back.meta_lr == cfg.meta_lr);
  CHECK(back.train.lr_drop_epochs == cfg.train.lr_drop_epochs);

  for (const auto& [key, value] : cli::to_settings(cfg)) {
    CHECK(std::find(cli::known_keys().begin(), cli::known_keys().end(), key) != cli::known_keys().end());
  }
}

TEST_CASE("prune is deterministic and refuses to overwrite") {
  TempDir dir("prune");
  auto cfg = small_config(dir / "a");
  cfg.seed = 3;
  const auto data = cli::load_datasets(cfg);
  std::ostringstream log;
  const auto a = cli::cmd_prune(cfg, data, log);
  cfg.out_dir = dir / "b";
  const auto b = cli::cmd_prune(cfg, data, log);
  CHECK(read_bytes(a.mask_path) == read_bytes(b.mask_path));
  CHECK(read_bytes(a.init_path) == read_bytes(b.init_path));
  CHECK(read_bytes(dir / "a" / "scores.f64") == read_bytes(dir / "b" / "scores.f64"));
  CHECK(read_bytes(dir / "a" / "scores.f64").size() == 8 * a.report.scores.size());
  CHECK(a.mask.retained() == pruning::retained_count(0.3, a.mask.keep.size()));
  CHECK(std::filesystem::exists(dir / "a" / "saliency.json"));
  CHECK(log.str().find("kept") != std::string::npos);

  CHECK_THROWS_AS(cli::cmd_prune(cfg, data, log), ConfigError);
  cfg.force = true;
  CHECK_NOTHROW(cli::cmd_prune(cfg, data, log));

  // The saved config reproduces the run.
  const auto reloaded = cli::apply_settings({}, cli::read_settings(dir / "a" / "config.ini"));
  CHECK(reloaded.seed == 3);
  CHECK(reloaded.density == cfg.density);
}

TEST_CASE("structured pruning counts channels") {
  TempDir dir("structured");
  auto cfg = small_config(dir / "s");
  cfg.granularity = Granularity::per_channel;
  cfg.density = 0.5;
  const auto data = cli::load_datasets(cfg);
  std::ostringstream log;
  const auto out = cli::cmd_prune(cfg, data, log);
  CHECK(out.mask.keep.size() == 16 + 10);
  CHECK(out.mask.retained() == 13);
}

TEST_CASE("train rejects missing and mismatched masks") {
  TempDir dir("mismatch");
  auto cfg = small_config(dir / "p");
  const auto data = cli::load_datasets(cfg);
  std::ostringstream log;
  const auto pruned = cli::cmd_prune(cfg, data, log);

  cfg.out_dir = dir / "t";
  CHECK_THROWS_AS(cli::cmd_train(cfg, data, dir / "nope.prmask", pruned.init_path, dir / "r.csv", log), ConfigError);

  auto other = cfg;
  other.model = "mlp:20-12-10";
  try {
    cli::cmd_train(other, data, pruned.mask_path, pruned.init_path, dir / "r.csv", log);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("layer00.linear.weight") != std::string::npos);
  }
}

TEST_CASE("run equals prune followed by train") {
  TempDir dir("run");
  auto cfg = small_config(dir / "run");
  cfg.seed = 5;
  const auto data = cli::load_datasets(cfg);
  std::ostringstream log;
  const auto whole = cli::cmd_run(cfg, data, dir / "results.csv", log);

  cfg.out_dir = dir / "split";
  const auto pruned = cli::cmd_prune(cfg, data, log);
  const auto parts = cli::cmd_train(cfg, data, pruned.mask_path, pruned.init_path, dir / "results.csv", log);

  CHECK(whole.metrics.final_accuracy == parts.metrics.final_accuracy);
  CHECK(read_bytes(dir / "run" / "final.ckpt") == read_bytes(dir / "split" / "final.ckpt"));
  CHECK(read_bytes(dir / "run" / "mask.prmask") == read_bytes(dir / "split" / "mask.prmask"));
  CHECK(std::filesystem::exists(dir / "run" / "run.json"));
  CHECK(count_lines(dir / "results.csv") == 3);
  CHECK(log.str().find("epoch 2/2") != std::string::npos);
}

TEST_CASE("sweeps write one row per point and a summary") {
  TempDir dir("sweep");
  auto cfg = small_config(dir / "m");
  const auto data = cli::load_datasets(cfg);
  std::ostringstream log;

  SUBCASE("unroll depth") {
    cfg.allow_zero_steps = true;
    const auto recs = cli::cmd_sweep(cfg, cli::SweepAxis::meta_steps, {"0", "1", "2", "3"}, data, log);
    CHECK(recs.size() == 4);
    CHECK(count_lines(cfg.out_dir / "results.csv") == 5);
    CHECK(std::filesystem::exists(cfg.out_dir / "M-2" / "final.ckpt"));
    const auto rows = cli::summarize(cfg.out_dir / "results.csv");
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].meta_steps == "0");
  }
  SUBCASE("criteria") {
    cfg.out_dir = dir / "c";
    cli::cmd_sweep(cfg, cli::SweepAxis::criterion, {}, data, log);
    CHECK(count_lines(cfg.out_dir / "results.csv") == 6);
    const std::string csv = read_text(cfg.out_dir / "results.csv");
    for (const char* c : {"prospr", "prospr-fo", "snip", "magnitude", "random"}) {
      CHECK(csv.find(std::string(",") + c + ",") != std::string::npos);
    }
  }
  SUBCASE("seeds") {
    cfg.out_dir = dir / "s";
    const auto recs = cli::cmd_sweep(cfg, cli::SweepAxis::seed, {"0", "1", "2"}, data, log);
    const auto rows = cli::summarize(cfg.out_dir / "results.csv");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].runs == 3);
    double mean = 0.0, var = 0.0;
    for (const auto& r : recs) mean += r.metrics.final_accuracy / 3.0;
    for (const auto& r : recs) var += (r.metrics.final_accuracy - mean) * (r.metrics.final_accuracy - mean) / 2.0;
    CHECK(rows[0].mean_acc == doctest::Approx(mean).epsilon(1e-12));
    CHECK(rows[0].std_acc == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    CHECK(read_text(cfg.out_dir / "summary.csv").find("mean_acc") != std::string::npos);

    std::ostringstream report;
    cli::cmd_report(cfg.out_dir, report);
    CHECK(report.str().find("prospr") != std::string::npos);
  }
  SUBCASE("a bad value fails before any run") {
    cfg.out_dir = dir / "bad";
    CHECK_THROWS_AS(cli::cmd_sweep(cfg, cli::SweepAxis::criterion, {"snip", "nonsense"}, data, log), ConfigError);
    CHECK(!std::filesystem::exists(cfg.out_dir / "criterion-snip"));
  }
}

TEST_CASE("sweep axis names") {
  CHECK(cli::parse_axis("M") == cli::SweepAxis::meta_steps);
  CHECK(cli::parse_axis("sparsity-grid") == cli::SweepAxis::sparsity);
  CHECK(cli::default_axis_values(cli::SweepAxis::sparsity).size() == 18);
  CHECK_THROWS_AS(cli::parse_axis("depth"), ConfigError);
}

TEST_CASE("check-grad passes and catches a broken adjoint") {
  TempDir dir("check");
  auto cfg = small_config(dir / "c");
  cfg.check_entries = 32;
  cfg.meta_steps = 2;
  const auto data = cli::load_datasets(cfg);
  std::ostringstream log;
  const auto ok = cli::cmd_check_grad(cfg, data, log);
  CHECK(ok.passed);
  CHECK(ok.entries.size() == 32);
  CHECK(log.str().find("PASS") != std::string::npos);

  ad::testing::corrupt_adjoint(ad::OpKind::matmul, 1.001);
  const auto bad = cli::cmd_check_grad(cfg, data, log);
  ad::testing::clear_adjoint_corruption();
  CHECK(!bad.passed);
  CHECK(log.str().find("FAIL") != std::string::npos);
}

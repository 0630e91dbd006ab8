// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prospr/data.hpp"
#include "prospr/error.hpp"
#include "prospr/experiment.hpp"
#include "prospr/mask.hpp"
#include "prospr/nn.hpp"
#include "prospr/oracle.hpp"
#include "prospr/pruning.hpp"
#include "prospr/random.hpp"
#include "prospr/trainer.hpp"

namespace fs = std::filesystem;
using namespace prospr;

namespace {

const fs::path kMnist = fs::path(PROSPR_TEST_DATA_DIR) / "mnist-5k";
const std::string kMlp = "mlp:784-300-100-10";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

Stats stats(const std::vector<double>& xs) {
  Stats s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
  s.std = xs.size() > 1 ? std::sqrt(s.std / static_cast<double>(xs.size() - 1)) : 0.0;
  return s;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(a[i]));
  }
  return scale == 0.0 ? diff : diff / scale;
}

// Shared state between criteria: the work directory, the MNIST subset and
// the runs trained for the statistical criteria (reused by criterion 9).
struct Context {
  fs::path work;
  cli::Datasets mnist;
  std::vector<fs::path> trained_runs;

  cli::ExperimentConfig mnist_config(const std::string& tag) const {
    cli::ExperimentConfig cfg;
    cfg.model = kMlp;
    cfg.dataset = cli::DatasetKind::mnist;
    cfg.data_dir = kMnist;
    cfg.out_dir = work / tag;
    return cfg;
  }
};

std::vector<data::Batch> draw(const data::Dataset& ds, data::SamplerConfig sc, std::size_t n) {
  data::Sampler s(ds, sc);
  std::vector<data::Batch> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(s.next());
  return out;
}

// 1. Exact meta-gradient vs central differences on the full MLP.
Outcome gradient_exactness(Context& ctx) {
  auto cfg = ctx.mnist_config("c1");
  cfg.meta_steps = 3;
  cfg.meta_lr = 0.1;
  cfg.sampler = data::SamplerMode::fixed_single_batch;
  cfg.check_entries = 64;
  cfg.check_step = 1e-3;
  cfg.check_tolerance = 1e-4;
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream log;
  const auto rep = cli::cmd_check_grad(cfg, ctx.mnist, log);
  const double secs = seconds_since(t0);
  const bool ok = rep.passed && rep.entries.size() == 64 && rep.max_rel_error <= 1e-4 && secs <= 300.0;
  return {ok, "max rel err " + num(rep.max_rel_error) + " (median " + num(rep.median_rel_error) +
                  ") over 64 entries, tol 1e-4, h 1e-3 (" + std::to_string(rep.refined) +
                  " entries refined to dodge a ReLU kink), " + num(secs, "%.0f") + " s (limit 300 s)"};
}

// 2. Backward, closed form and finite differences on w_{i+1} = w_i - a x (w_i x - y).
Outcome triple_oracle(Context&) {
  Rng rng(20240501);
  const std::size_t step_choices[] = {1, 2, 5};
  double worst = 0.0;
  std::string worst_case;
  for (int draw = 0; draw < 100; ++draw) {
    const double x = rng.uniform(-2.0, 2.0);
    const double y = rng.uniform(-2.0, 2.0);
    const double w = rng.uniform(-2.0, 2.0);
    double lr = 0.0;
    while (lr == 0.0) lr = rng.uniform(0.0, 0.4);
    const std::size_t steps = step_choices[rng.below(3)];

    const auto problem = oracle::quadratic_problem(x, y, w);
    const double backward = pruning::unrolled_mask_gradient(problem, steps, lr)[0];
    const double symbolic = oracle::symbolic_quadratic_oracle(x, y, w, 1.0, lr, steps);
    oracle::FdConfig fd;
    fd.entries = 0;
    const double numeric = oracle::fd_meta_gradient(problem, steps, lr, fd)[0].value;

    const double e = std::max({oracle::relative_error(backward, symbolic), oracle::relative_error(backward, numeric),
                               oracle::relative_error(symbolic, numeric)});
    if (e > worst) {
      worst = e;
      worst_case = "x=" + num(x) + " y=" + num(y) + " w=" + num(w) + " a=" + num(lr) + " M=" + std::to_string(steps);
    }
  }
  return {worst <= 1e-8, "max pairwise rel err " + num(worst) + " over 100 draws (tol 1e-8), worst at " + worst_case};
}

// 3. Zero unroll steps selects the same mask as SNIP on the same batch.
Outcome zero_steps_is_snip(Context& ctx) {
  Rng rng(77);
  const auto& grid = cli::sparsity_grid();
  std::size_t matches = 0;
  std::string first_mismatch;
  for (int i = 0; i < 10; ++i) {
    const std::uint64_t seed = rng.bits();
    const auto gran = rng.below(2) == 0 ? Granularity::per_weight : Granularity::per_channel;
    const double density = 1.0 - grid[rng.below(grid.size())] / 100.0;
    const auto mode = rng.below(2) == 0 ? data::SamplerMode::shuffled : data::SamplerMode::class_balanced;
    const data::SamplerConfig sc{16 + rng.below(240), mode, Rng::mix(seed, 2)};

    nn::Model model;
    data::Dataset synth;
    const data::Dataset* train = &ctx.mnist.train;
    if (i % 5 == 4) {
      model = nn::make_conv6(1, 28, 10, {4, 6, 8});
    } else if (i % 2 == 0) {
      model = nn::parse_model("mlp:784-" + std::to_string(20 + rng.below(200)) + "-" +
                                  std::to_string(10 + rng.below(100)) + "-10",
                              ctx.mnist.train.sample_shape(), 10);
    } else {
      data::SyntheticConfig scfg;
      scfg.num_categories = 2 + rng.below(9);
      scfg.dim = 5 + rng.below(40);
      scfg.per_category = 40;
      scfg.seed = seed;
      synth = data::make_synthetic(scfg);
      train = &synth;
      model = nn::make_mlp({scfg.dim, 8 + rng.below(40), scfg.num_categories});
    }
    const auto state = nn::init_params(model, Rng::mix(seed, 1));

    data::Sampler for_prospr(*train, sc);
    pruning::ProsprOptions opts;
    opts.steps = 0;
    opts.granularity = gran;
    opts.allow_zero_steps = true;
    const Mask a = pruning::top_k_mask(pruning::prospr_scores(model, state, for_prospr, opts), density);

    data::Sampler for_snip(*train, sc);
    const Mask b = pruning::top_k_mask(pruning::snip_scores(model, state, for_snip.next(), gran), density);
    if (a == b) {
      ++matches;
    } else if (first_mismatch.empty()) {
      first_mismatch = ", first mismatch in config " + std::to_string(i) + " (" + model.name + ")";
    }
  }
  return {matches == 10, std::to_string(matches) + "/10 configs give identical masks" + first_mismatch};
}

// 4. The exact/first-order gap scales linearly with the meta learning rate.
Outcome first_order_consistency(Context& ctx) {
  const auto model = nn::parse_model(kMlp, ctx.mnist.train.sample_shape(), 10);
  const auto state = nn::init_params(model, Rng::mix(4, 1));
  const auto problem = pruning::model_problem(model, state, nn::make_mask_spec(model, Granularity::per_weight),
                                              draw(ctx.mnist.train, {512, data::SamplerMode::shuffled, 4}, 3));
  // Normwise: max_j |exact_j - fo_j| / max_j |exact_j|. Entrywise ratios are
  // dominated by entries where the exact value crosses zero.
  std::vector<double> dev;
  for (double lr : {1e-2, 5e-3, 2.5e-3}) {
    const auto exact = pruning::unrolled_mask_gradient(problem, 2, lr);
    const auto fo = pruning::first_order_mask_gradient(problem, 2, lr);
    double diff = 0.0, scale = 0.0;
    for (std::size_t j = 0; j < exact.size(); ++j) {
      diff = std::max(diff, std::abs(exact[j] - fo[j]));
      scale = std::max(scale, std::abs(exact[j]));
    }
    dev.push_back(diff / scale);
  }
  const double r1 = dev[0] / dev[1], r2 = dev[1] / dev[2];
  const double need = 2.0 * 0.8;
  return {r1 >= need && r2 >= need, "deviation " + num(dev[0]) + " -> " + num(dev[1]) + " -> " + num(dev[2]) +
                                        ", halving ratios " + num(r1) + ", " + num(r2) + " (need >= " +
                                        num(need) + ")"};
}

// 5. Exact k at every grid point; same seed, same mask file.
Outcome sparsity_exactness(Context& ctx) {
  std::size_t good_k = 0, identical = 0;
  std::string problem;
  const auto& grid = cli::sparsity_grid();
  for (double sparsity : grid) {
    auto cfg = ctx.mnist_config("c5");
    cfg.seed = 11;
    cfg.density = 1.0 - sparsity / 100.0;
    std::ostringstream log;
    std::vector<std::vector<unsigned char>> files;
    std::size_t retained = 0, total = 0;
    for (const char* run : {"a", "b"}) {
      cfg.out_dir = ctx.work / "c5" / (num(sparsity, "%g") + run);
      const auto out = cli::cmd_prune(cfg, ctx.mnist, log);
      files.push_back(read_bytes(out.mask_path));
      const Mask reloaded = load_mask(out.mask_path);
      retained = reloaded.retained();
      total = reloaded.keep.size();
    }
    const auto expected = static_cast<std::size_t>(std::floor(cfg.density * static_cast<double>(total) + 0.5));
    if (retained == expected) {
      ++good_k;
    } else if (problem.empty()) {
      problem = ", at " + num(sparsity, "%g") + "% kept " + std::to_string(retained) + " of expected " +
                std::to_string(expected);
    }
    if (!files[0].empty() && files[0] == files[1]) ++identical;
  }
  const std::size_t n = grid.size();
  return {good_k == n && identical == n, std::to_string(good_k) + "/" + std::to_string(n) + " grid points exact k, " +
                                             std::to_string(identical) + "/" + std::to_string(n) +
                                             " bit-identical repeat masks" + problem};
}

struct Trained {
  std::vector<double> acc;
};

Trained train_runs(Context& ctx, const std::string& tag, cli::ExperimentConfig cfg) {
  Trained t;
  const fs::path csv = ctx.work / "results.csv";
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    cfg.out_dir = ctx.work / (tag + "-s" + std::to_string(seed));
    std::ostringstream log;
    const auto rec = cli::cmd_run(cfg, ctx.mnist, csv, log);
    t.acc.push_back(rec.metrics.final_accuracy);
    ctx.trained_runs.push_back(cfg.out_dir);
    std::cerr << "  " << tag << " seed " << seed << ": " << num(rec.metrics.final_accuracy, "%.4f") << '\n';
  }
  return t;
}

std::string describe(const std::string& name, const Stats& s) {
  return name + " " + num(100.0 * s.mean, "%.2f") + "+-" + num(100.0 * s.std, "%.2f");
}

// 6. Deeper unrolls give better masks at 95% sparsity.
Outcome monotone_m(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Stats> by_m;
  for (std::size_t m = 0; m <= 3; ++m) {
    auto cfg = ctx.mnist_config("");
    cfg.density = 0.05;
    cfg.meta_steps = m;
    cfg.allow_zero_steps = true;
    cfg.sampler = data::SamplerMode::fixed_single_batch;
    by_m.push_back(stats(train_runs(ctx, "c6-M" + std::to_string(m), cfg).acc));
  }
  const double secs = seconds_since(t0);
  const double margin = 100.0 * (by_m[3].mean - by_m[0].mean);
  bool ordered = true;
  for (std::size_t m = 0; m + 1 < by_m.size(); ++m) {
    if (by_m[m + 1].mean < by_m[m].mean - std::max(by_m[m].std, by_m[m + 1].std)) ordered = false;
  }
  std::string detail;
  for (std::size_t m = 0; m < by_m.size(); ++m) detail += describe("M" + std::to_string(m), by_m[m]) + ", ";
  detail += "M3-M0 " + num(margin, "%+.2f") + " points (need >= 0.3), non-decreasing within 1 std: " +
            (ordered ? "yes" : "no") + ", " + num(secs, "%.0f") + " s (limit 3600 s)";
  return {margin >= 0.3 && ordered && secs <= 3600.0, detail};
}

// 7. The default pipeline beats random pruning by more than one std.
Outcome beats_random(Context& ctx) {
  auto cfg = ctx.mnist_config("");
  cfg.density = 0.05;
  const Stats ours = stats(train_runs(ctx, "c7-prospr", cfg).acc);
  cfg.criterion = pruning::Criterion::random;
  const Stats rnd = stats(train_runs(ctx, "c7-random", cfg).acc);
  const double spread = std::max(ours.std, rnd.std);
  return {ours.mean >= rnd.mean + spread, describe("prospr", ours) + " vs " + describe("random", rnd) +
                                              ", need prospr >= random + " + num(100.0 * spread, "%.2f")};
}

// 8. Per-channel masks: shrunk model equals masked model, and the channel
// meta-gradient is the sum of its weights' meta-gradients.
Outcome structured_equivalence(Context& ctx) {
  struct Case {
    nn::Model model;
    const data::Dataset* train;
    std::size_t batch;
    std::size_t steps;
  };
  const auto images = [&] {
    Rng rng(8);
    data::Dataset ds;
    ds.inputs = Tensor({64, 3, 16, 16});
    for (double& v : ds.inputs.data()) v = rng.uniform();
    for (int i = 0; i < 64; ++i) ds.labels.push_back(i % 10);
    ds.num_categories = 10;
    return ds;
  }();
  const std::vector<Case> cases{
      {nn::parse_model(kMlp, ctx.mnist.train.sample_shape(), 10), &ctx.mnist.train, 128, 3},
      {nn::make_conv6(3, 16, 10, {8, 12, 16}), &images, 16, 2}};

  double logit_err = 0.0, channel_err = 0.0;
  std::size_t channels = 0;
  Rng rng(88);
  for (const auto& c : cases) {
    const auto state = nn::init_params(c.model, 5);
    const auto batches = draw(*c.train, {c.batch, data::SamplerMode::shuffled, 6}, c.steps + 1);

    const auto per_weight = nn::make_mask_spec(c.model, Granularity::per_weight);
    const auto per_channel = nn::make_mask_spec(c.model, Granularity::per_channel);
    const auto gw = pruning::unrolled_mask_gradient(pruning::model_problem(c.model, state, per_weight, batches),
                                                    c.steps, 0.1);
    const auto gc = pruning::unrolled_mask_gradient(pruning::model_problem(c.model, state, per_channel, batches),
                                                    c.steps, 0.1);
    const auto ow = per_weight.offsets();
    const auto oc = per_channel.offsets();
    for (std::size_t g = 0; g < per_channel.groups.size(); ++g) {
      const auto& grp = per_channel.groups[g];
      for (std::size_t e = 0; e < grp.entries; ++e) {
        double sum = 0.0;
        for (std::size_t k = 0; k < grp.group_size; ++k) sum += gw[ow[g] + e * grp.group_size + k];
        channel_err = std::max(channel_err, oracle::relative_error(gc[oc[g] + e], sum));
        ++channels;
      }
    }

    pruning::SaliencyReport rep;
    rep.criterion = pruning::Criterion::prospr;
    rep.spec = per_channel;
    rep.raw = gc;
    pruning::normalize(rep, state);
    const Mask mask = pruning::top_k_mask(rep, 0.5);
    const auto masked = nn::apply_mask_to_state(state, mask);
    const auto [small, small_state] = nn::shrink(c.model, masked, mask);
    Shape s{100};
    s.insert(s.end(), c.model.input_shape.begin(), c.model.input_shape.end());
    Tensor x(s);
    for (double& v : x.data()) v = rng.uniform();
    logit_err = std::max(logit_err, max_rel_diff(nn::logits(c.model, masked, x), nn::logits(small, small_state, x)));
  }
  return {logit_err <= 1e-10 && channel_err <= 1e-8,
          "shrunk vs masked logits rel err " + num(logit_err) + " (tol 1e-10) on 100 inputs for MLP and conv6; " +
              "channel vs summed weights rel err " + num(channel_err) + " over " + std::to_string(channels) +
              " channels (tol 1e-8)"};
}

// 9. Trained checkpoints keep pruned entries at exactly zero.
Outcome sparsity_preserved(Context& ctx) {
  std::vector<fs::path> runs = ctx.trained_runs;
  {
    auto cfg = ctx.mnist_config("c9-structured");
    cfg.granularity = Granularity::per_channel;
    cfg.density = 0.3;
    std::ostringstream log;
    cli::cmd_run(cfg, ctx.mnist, ctx.work / "results.csv", log);
    runs.push_back(cfg.out_dir);
  }
  if (ctx.trained_runs.empty()) {
    auto cfg = ctx.mnist_config("c9-weight");
    std::ostringstream log;
    cli::cmd_run(cfg, ctx.mnist, ctx.work / "results.csv", log);
    runs.push_back(cfg.out_dir);
  }

  std::size_t clean = 0, nonzero_pruned = 0;
  std::string mismatch;
  for (const auto& dir : runs) {
    const Mask mask = load_mask(dir / "mask.prmask");
    const auto final_state = nn::load_checkpoint(dir / "final.ckpt");
    bool ok = true;
    for (std::size_t g = 0; g < mask.spec.groups.size(); ++g) {
      const auto& grp = mask.spec.groups[g];
      const Tensor keep = mask.expand(g);
      const Tensor& w = final_state.params.at(grp.param_index).value;
      std::size_t kept = 0, nonzero = 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        kept += keep[i] != 0.0;
        nonzero += w[i] != 0.0;
        if (keep[i] == 0.0 && w[i] != 0.0) ++nonzero_pruned, ok = false;
      }
      if (kept != nonzero) {
        ok = false;
        if (mismatch.empty()) {
          mismatch = ", " + dir.filename().string() + " " + grp.param + ": mask keeps " + std::to_string(kept) +
                     ", checkpoint has " + std::to_string(nonzero) + " nonzero";
        }
      }
    }
    clean += ok;
  }
  return {clean == runs.size(), std::to_string(clean) + "/" + std::to_string(runs.size()) +
                                    " trained runs with per-layer density equal to the mask file, " +
                                    std::to_string(nonzero_pruned) + " nonzero pruned entries" + mismatch};
}

template <class F>
std::string format_error_offset(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return std::to_string(e.offset());
  } catch (const std::exception& e) {
    return std::string("other error: ") + e.what();
  }
  return "accepted";
}

// 10. Checkpoint and mask files round-trip; malformed inputs name a byte offset.
Outcome format_round_trips(Context& ctx) {
  const fs::path dir = ctx.work / "c10";
  fs::create_directories(dir);
  std::vector<std::string> failures;

  const auto model = nn::make_conv6(3, 8, 10, {4, 6, 8});
  auto state = nn::init_params(model, 10);
  state.params[1].value[0] = -0.0;
  state.params[1].value[1] = 4.9e-324;
  state.params[1].value[2] = 1.7976931348623157e308;
  nn::save_checkpoint(dir / "a.ckpt", state);
  const auto loaded = nn::load_checkpoint(dir / "a.ckpt");
  nn::save_checkpoint(dir / "b.ckpt", loaded);
  bool same_values = loaded.params.size() == state.params.size();
  for (std::size_t i = 0; same_values && i < state.params.size(); ++i) {
    same_values = loaded.params[i].name == state.params[i].name &&
                  loaded.params[i].value.shape() == state.params[i].value.shape() &&
                  std::memcmp(loaded.params[i].value.data().data(), state.params[i].value.data().data(),
                              state.params[i].value.size() * sizeof(double)) == 0;
  }
  if (!same_values || read_bytes(dir / "a.ckpt") != read_bytes(dir / "b.ckpt")) failures.push_back("checkpoint");

  Rng rng(10);
  for (auto gran : {Granularity::per_weight, Granularity::per_channel}) {
    Mask mask = Mask::ones(nn::make_mask_spec(model, gran));
    for (auto& k : mask.keep) k = rng.uniform() < 0.3;
    save_mask(dir / "a.prmask", mask);
    const Mask back = load_mask(dir / "a.prmask");
    save_mask(dir / "b.prmask", back);
    if (!(back == mask) || read_bytes(dir / "a.prmask") != read_bytes(dir / "b.prmask")) {
      failures.push_back("mask (" + to_string(gran) + ")");
    }
  }

  std::vector<unsigned char> labels;
  put_u32_be(labels, 0x00000801);
  put_u32_be(labels, 2);
  labels.insert(labels.end(), {0, 1});
  std::vector<unsigned char> images;
  put_u32_be(images, 0x00000803);
  for (std::uint32_t v : {2u, 2u, 2u}) put_u32_be(images, v);
  images.insert(images.end(), {1, 2, 3, 4, 5, 6, 7, 8});
  write_bytes(dir / "labels", labels);

  const auto idx_offset = [&](std::vector<unsigned char> bytes) {
    write_bytes(dir / "images", bytes);
    return format_error_offset([&] { data::load_idx(dir / "images", dir / "labels", data::Split::train); });
  };
  auto bad_magic = images;
  bad_magic[3] = 0x01;
  auto short_header = images;
  short_header.resize(10);
  auto short_pixels = images;
  short_pixels.resize(20);

  std::vector<unsigned char> record(3073, 0);
  record[0] = 3;
  auto short_cifar = record;
  short_cifar.insert(short_cifar.end(), 100, 0);
  auto bad_label = record;
  bad_label[0] = 10;
  const auto cifar_offset = [&](const std::vector<unsigned char>& bytes) {
    write_bytes(dir / "batch.bin", bytes);
    return format_error_offset([&] { data::load_cifar10_binary(dir / "batch.bin", data::Split::test); });
  };

  const std::vector<std::pair<std::string, std::pair<std::string, std::string>>> malformed{
      {"IDX bad magic", {idx_offset(bad_magic), "0"}},
      {"IDX truncated header", {idx_offset(short_header), "8"}},
      {"IDX truncated pixels", {idx_offset(short_pixels), "16"}},
      {"CIFAR partial record", {cifar_offset(short_cifar), "3073"}},
      {"CIFAR label out of range", {cifar_offset(bad_label), "0"}},
  };
  for (const auto& [name, got_want] : malformed) {
    if (got_want.first != got_want.second) {
      failures.push_back(name + " gave " + got_want.first + ", want offset " + got_want.second);
    }
  }

  std::string detail = "checkpoint and mask (both granularities) byte-identical after reload; " +
                       std::to_string(malformed.size()) + " malformed IDX/CIFAR fixtures rejected at expected offsets";
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " [" + f + "]";
  }
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"gradient exactness", gradient_exactness},
      {"triple-oracle agreement", triple_oracle},
      {"M=0 reduces to SNIP", zero_steps_is_snip},
      {"first-order consistency", first_order_consistency},
      {"sparsity exactness and determinism", sparsity_exactness},
      {"monotone-M trend", monotone_m},
      {"criterion ordering vs random", beats_random},
      {"structured equivalence", structured_equivalence},
      {"training-phase sparsity preservation", sparsity_preserved},
      {"format round-trips", format_round_trips},
  };

  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  Context ctx;
  ctx.work = fs::temp_directory_path() / ("prospr-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);
  try {
    ctx.mnist = {data::load_mnist(kMnist, data::Split::train), data::load_mnist(kMnist, data::Split::test)};
  } catch (const std::exception& e) {
    std::cout << "cannot load " << kMnist << ": " << e.what() << '\n';
    return 1;
  }

  int failed = 0;
  for (std::size_t n = 1; n <= criteria.size(); ++n) {
    if (!selected.empty() && !selected.contains(n)) continue;
    const auto& [name, run] = criteria[n - 1];
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      out = run(ctx);
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    failed += !out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << "): " << out.detail << " ["
              << num(seconds_since(t0), "%.1f") << " s]" << std::endl;
  }

  std::error_code ec;
  fs::remove_all(ctx.work, ec);
  return failed == 0 ? 0 : 1;
}

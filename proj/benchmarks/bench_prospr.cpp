#include <benchmark/benchmark.h>

#include <vector>

#include "prospr/autodiff.hpp"
#include "prospr/data.hpp"
#include "prospr/nn.hpp"
#include "prospr/oracle.hpp"
#include "prospr/pruning.hpp"
#include "prospr/random.hpp"
#include "prospr/trainer.hpp"

using namespace prospr;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

const data::Dataset& mnist() {
  static const data::Dataset ds = data::load_mnist(PROSPR_BENCH_DATA_DIR "/mnist-5k", data::Split::train);
  return ds;
}

// Forward-only matmul of square operands.
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  for (auto _ : state) {
    ad::Graph g;
    benchmark::DoNotOptimize(ad::matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

// Scoring the 784-300-100-10 MLP on MNIST; the argument is the unroll depth M.
template <pruning::Criterion C>
void BM_Score(benchmark::State& state) {
  const auto& ds = mnist();
  const auto model = nn::parse_model("mlp:784-300-100-10", ds.sample_shape(), 10);
  const auto init = nn::init_params(model, 1);
  pruning::ProsprOptions opts;
  opts.steps = static_cast<std::size_t>(state.range(0));
  opts.allow_zero_steps = true;
  for (auto _ : state) {
    data::Sampler sampler(ds, {256, data::SamplerMode::shuffled, 3});
    const auto rep = C == pruning::Criterion::prospr ? pruning::prospr_scores(model, init, sampler, opts)
                                                     : pruning::prospr_first_order_scores(model, init, sampler, opts);
    benchmark::DoNotOptimize(rep.scores.data());
  }
}
BENCHMARK_TEMPLATE(BM_Score, pruning::Criterion::prospr)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK_TEMPLATE(BM_Score, pruning::Criterion::prospr_first_order)
    ->DenseRange(1, 3)
    ->Unit(benchmark::kMillisecond);

// One finite-difference probe (two full unrolls) for comparison with one
// exact meta-gradient.
void BM_FiniteDifferenceEntry(benchmark::State& state) {
  const auto& ds = mnist();
  const auto model = nn::parse_model("mlp:784-300-100-10", ds.sample_shape(), 10);
  const auto init = nn::init_params(model, 1);
  data::Sampler sampler(ds, {256, data::SamplerMode::fixed_single_batch, 3});
  const auto problem =
      pruning::model_problem(model, init, nn::make_mask_spec(model, Granularity::per_weight), {sampler.next()});
  oracle::FdConfig fd;
  fd.entries = 1;
  for (auto _ : state) benchmark::DoNotOptimize(oracle::fd_meta_gradient(problem, 0, 0.1, fd));
}
BENCHMARK(BM_FiniteDifferenceEntry)->Unit(benchmark::kMillisecond);

// One pass over the MNIST subset with a 95%-sparse mask.
void BM_TrainEpoch(benchmark::State& state) {
  const auto& ds = mnist();
  const auto model = nn::parse_model("mlp:784-300-100-10", ds.sample_shape(), 10);
  const auto init = nn::init_params(model, 1);
  const Mask mask = pruning::top_k_mask(pruning::magnitude_scores(model, init, Granularity::per_weight), 0.05);
  train::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train::train_pruned(model, init, mask, ds, nullptr, cfg).state);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.size()));
}
BENCHMARK(BM_TrainEpoch)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

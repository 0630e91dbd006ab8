#pragma once

// Independent checks for the meta-gradient. Nothing here differentiates
// through an update: finite differences rerun the whole unroll with a
// perturbed mask, and the scalar quadratic model has a closed form.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "prospr/pruning.hpp"

namespace prospr::oracle {

struct FdConfig {
  double step = 1e-5;
  std::size_t entries = 64;  // 0 checks every mask entry
  std::uint64_t seed = 0;
  std::size_t refinements = 3;  // times the step may shrink 10x to avoid a ReLU kink
};

struct FdEstimate {
  std::size_t entry = 0;
  double value = 0.0;
  double step = 0.0;    // step actually used
  bool kink = false;    // a ReLU still flipped at the smallest step tried
};

/// Loss after `steps` plain SGD updates starting from w_0 = c * w_init, for
/// an arbitrary real-valued mask c (flat, mask-entry order).
double unrolled_loss(const pruning::UnrollProblem& problem, std::span<const double> mask, std::size_t steps, double lr);

/// Entries checked by fd_meta_gradient: a seeded sample, sorted.
std::vector<std::size_t> sample_entries(std::size_t total, const FdConfig& cfg);

/// Central differences (L(c_j + h) - L(c_j - h)) / 2h around c = 1, each side
/// a full unroll on the same batches. When either side changes the ReLU
/// activation pattern of the unroll, h shrinks tenfold (up to
/// `cfg.refinements` times).
std::vector<FdEstimate> fd_meta_gradient(const pruning::UnrollProblem& problem, std::size_t steps, double lr,
                                         const FdConfig& cfg);

/// d/dc of L(w_M) = (w_M x - y)^2 / 2 with w_0 = c * w_init and
/// w_{i+1} = w_i - lr * x (w_i x - y):
/// (w_M x - y) * x * (1 - lr x^2)^M * w_init.
double symbolic_quadratic_oracle(double x, double y, double w_init, double c, double lr, std::size_t steps);

/// The one-parameter problem L(w) = (w x - y)^2 / 2 on every batch.
pruning::UnrollProblem quadratic_problem(double x, double y, double w_init);

/// |a - b| / max(|a|, |b|, floor); 0 when both are 0.
double relative_error(double a, double b, double floor = 0.0);

struct GradCheckEntry {
  std::size_t entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  double step = 0.0;
  bool kink = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double median_rel_error = 0.0;
  double floor = 0.0;
  std::size_t refined = 0;  // entries whose step shrank to avoid a kink
  bool passed = false;
};

/// Compares analytic values against finite-difference estimates. With a
/// nonzero `floor_fraction` the relative-error denominator is at least that
/// fraction of the largest analytic magnitude among the checked entries.
GradCheckReport compare(std::span<const double> analytic, std::span<const FdEstimate> numeric, double tolerance,
                        double floor_fraction = 0.0);

}  // namespace prospr::oracle

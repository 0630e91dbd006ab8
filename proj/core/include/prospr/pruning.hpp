#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prospr/autodiff.hpp"
#include "prospr/data.hpp"
#include "prospr/mask.hpp"
#include "prospr/nn.hpp"

namespace prospr::pruning {

enum class Criterion { prospr, prospr_first_order, snip, magnitude, random };

std::string to_string(Criterion c);
Criterion parse_criterion(const std::string& name);

/// Per-entry saliency. `raw` holds the signed criterion values g_j (for
/// magnitude/random, the non-negative score itself); `scores` the normalized
/// s_j = |g_j| / sum_k |g_k|.
struct SaliencyReport {
  Criterion criterion = Criterion::snip;
  std::size_t steps = 0;
  double meta_lr = 0.0;
  MaskSpec spec;
  std::vector<double> raw;
  std::vector<double> scores;
  double normalizer = 0.0;
  std::size_t batches_consumed = 0;
  double elapsed_seconds = 0.0;
  bool magnitude_fallback = false;  // every raw value was zero
};

/// A differentiable training problem over parameters with an attached mask:
/// `loss(params, i)` is the training loss on the i-th batch.
struct UnrollProblem {
  std::vector<Tensor> params;
  MaskSpec spec;
  std::function<ad::Var(std::span<const ad::Var> params, std::size_t batch_index)> loss;
};

/// The problem of training `model` from `state` on the given batches.
UnrollProblem model_problem(const nn::Model& model, const nn::ModelState& state, const MaskSpec& spec,
                            std::vector<data::Batch> batches);

/// Exact gradient of loss(w_steps, batch steps) w.r.t. the all-ones mask,
/// where w_0 = c * w_init and w_{i+1} = w_i - lr * grad loss(w_i, batch i).
/// Differentiates through every update, Hessian terms included. Flat in
/// mask-entry order.
std::vector<double> unrolled_mask_gradient(const UnrollProblem& problem, std::size_t steps, double lr);

/// Runs the same updates without recording them and returns, per mask entry,
/// the group sum of grad_{w_steps} loss * w_init. Memory does not grow with
/// `steps`.
std::vector<double> first_order_mask_gradient(const UnrollProblem& problem, std::size_t steps, double lr);

struct ProsprOptions {
  std::size_t steps = 3;
  double meta_lr = 0.1;
  Granularity granularity = Granularity::per_weight;
  bool allow_zero_steps = false;  // steps == 0 reduces to SNIP; test use
};

/// Draws steps + 1 batches from `sampler` and scores by the exact
/// meta-gradient.
SaliencyReport prospr_scores(const nn::Model& model, const nn::ModelState& state, data::Sampler& sampler,
                             const ProsprOptions& opts);

SaliencyReport prospr_first_order_scores(const nn::Model& model, const nn::ModelState& state,
                                         data::Sampler& sampler, const ProsprOptions& opts);

/// Gradient of the loss at c * w_init w.r.t. the mask c, on one batch.
SaliencyReport snip_scores(const nn::Model& model, const nn::ModelState& state, const data::Batch& batch,
                           Granularity granularity);

/// |w_init| per weight, or the L2 norm of each group for per-channel masks.
SaliencyReport magnitude_scores(const nn::Model& model, const nn::ModelState& state, Granularity granularity);

/// i.i.d. uniform scores.
SaliencyReport random_scores(const nn::Model& model, Granularity granularity, std::uint64_t seed);

/// Fills `scores` and `normalizer` from `raw`. All-zero raw values fall back
/// to magnitude ordering of `state` (with a warning on stderr).
void normalize(SaliencyReport& report, const nn::ModelState& state);

/// k = round(density * m), halves rounded up.
std::size_t retained_count(double density, std::size_t entries);

/// Keeps the k highest-scoring entries across the whole network. Ties go to
/// the lower flat index.
Mask top_k_mask(const SaliencyReport& report, double density);

struct LayerCollapseReport {
  struct Layer {
    std::string param;
    std::size_t retained = 0;  // weights
    std::size_t total = 0;
  };
  std::vector<Layer> layers;
  bool collapsed = false;
  std::vector<std::string> collapsed_layers;
};

LayerCollapseReport layer_collapse_report(const Mask& mask, const nn::Model& model);

}  // namespace prospr::pruning

#include "prospr/pruning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include "prospr/error.hpp"
#include "prospr/random.hpp"

namespace prospr::pruning {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<ad::Var> mask_leaves(ad::Graph& g, const MaskSpec& spec) {
  std::vector<ad::Var> mask;
  for (std::size_t i = 0; i < spec.groups.size(); ++i) {
    mask.push_back(g.leaf(Tensor(spec.entry_shape(i), 1.0), true, "mask:" + spec.groups[i].param));
  }
  return mask;
}

std::vector<double> flatten_mask_grads(const ad::GradientMap& grads, std::span<const ad::Var> mask) {
  std::vector<double> flat;
  for (const auto& m : mask) {
    const auto d = grads.at(m).data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  return flat;
}

// Sum over each mask entry's weights of a[i] * b[i] for the prunable parameters.
std::vector<double> group_products(const MaskSpec& spec, std::span<const Tensor> a, std::span<const Tensor> b) {
  std::vector<double> out;
  out.reserve(spec.total_entries());
  for (const auto& grp : spec.groups) {
    const auto x = a[grp.param_index].data();
    const auto y = b[grp.param_index].data();
    for (std::size_t e = 0; e < grp.entries; ++e) {
      double s = 0.0;
      for (std::size_t k = e * grp.group_size; k < (e + 1) * grp.group_size; ++k) s += x[k] * y[k];
      out.push_back(s);
    }
  }
  return out;
}

void check_steps(const ProsprOptions& opts) {
  if (opts.steps == 0 && !opts.allow_zero_steps) throw ConfigError("ProsPr needs at least one unrolled step");
  if (!(opts.meta_lr >= 0.0) || !std::isfinite(opts.meta_lr)) throw ConfigError("meta learning rate must be >= 0");
}

std::vector<data::Batch> draw(data::Sampler& sampler, std::size_t n) {
  std::vector<data::Batch> batches;
  for (std::size_t i = 0; i < n; ++i) batches.push_back(sampler.next());
  return batches;
}

std::vector<Tensor> values_of(const nn::ModelState& state) {
  std::vector<Tensor> v;
  for (const auto& p : state.params) v.push_back(p.value);
  return v;
}

}  // namespace

std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::prospr: return "prospr";
    case Criterion::prospr_first_order: return "prospr-fo";
    case Criterion::snip: return "snip";
    case Criterion::magnitude: return "magnitude";
    case Criterion::random: return "random";
  }
  return "?";
}

Criterion parse_criterion(const std::string& name) {
  if (name == "prospr") return Criterion::prospr;
  if (name == "prospr-fo" || name == "prospr-first-order") return Criterion::prospr_first_order;
  if (name == "snip") return Criterion::snip;
  if (name == "magnitude") return Criterion::magnitude;
  if (name == "random") return Criterion::random;
  throw ConfigError("unknown criterion '" + name + "' (prospr|prospr-fo|snip|magnitude|random)");
}

UnrollProblem model_problem(const nn::Model& model, const nn::ModelState& state, const MaskSpec& spec,
                            std::vector<data::Batch> batches) {
  UnrollProblem p;
  p.params = values_of(state);
  p.spec = spec;
  auto shared = std::make_shared<const std::vector<data::Batch>>(std::move(batches));
  p.loss = [model, shared](std::span<const ad::Var> params, std::size_t i) {
    if (i >= shared->size()) throw ConfigError("unroll asked for batch " + std::to_string(i) + " of " +
                                               std::to_string(shared->size()));
    return nn::loss(model, params, (*shared)[i]);
  };
  return p;
}

std::vector<double> unrolled_mask_gradient(const UnrollProblem& problem, std::size_t steps, double lr) {
  ad::Graph g(ad::RetainPolicy::keep_history);
  std::vector<ad::Var> params;
  for (std::size_t i = 0; i < problem.params.size(); ++i) params.push_back(g.leaf(problem.params[i], true));
  const auto mask = mask_leaves(g, problem.spec);
  std::vector<ad::Var> w = nn::apply_mask(problem.spec, params, mask);

  for (std::size_t step = 0; step < steps; ++step) {
    try {
      const ad::Var l = problem.loss(w, step);
      const auto grads = ad::grad(l, w);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = g.sgd_update(w[i], grads[i], lr);
    } catch (const NumericError& e) {
      throw NumericError("non-finite value during unrolled step " + std::to_string(step) + ": " + e.what());
    }
  }
  ad::Var final_loss;
  try {
    final_loss = problem.loss(w, steps);
  } catch (const NumericError& e) {
    throw NumericError("non-finite final loss after " + std::to_string(steps) + " unrolled steps: " + e.what());
  }
  return flatten_mask_grads(ad::backward(final_loss, mask), mask);
}

std::vector<double> first_order_mask_gradient(const UnrollProblem& problem, std::size_t steps, double lr) {
  std::vector<Tensor> w = problem.params;
  for (std::size_t step = 0;; ++step) {
    ad::Graph g(ad::RetainPolicy::truncate);
    std::vector<ad::Var> vars;
    for (const auto& t : w) vars.push_back(g.leaf(t, true));
    ad::GradientMap grads;
    try {
      grads = ad::backward(problem.loss(vars, step), vars);
    } catch (const NumericError& e) {
      throw NumericError("non-finite value during first-order step " + std::to_string(step) + ": " + e.what());
    }
    if (step == steps) {
      std::vector<Tensor> final_grads;
      for (const auto& v : vars) final_grads.push_back(grads.at(v));
      return group_products(problem.spec, final_grads, problem.params);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto d = w[i].data();
      const auto gd = grads.at(vars[i]).data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * gd[k];
    }
  }
}

void normalize(SaliencyReport& report, const nn::ModelState& state) {
  double total = 0.0;
  for (double v : report.raw) total += std::abs(v);
  report.magnitude_fallback = false;
  if (total == 0.0) {
    std::cerr << "warning: all " << to_string(report.criterion)
              << " saliencies are zero; falling back to weight magnitude ordering\n";
    std::vector<Tensor> w;
    for (const auto& p : state.params) w.push_back(p.value);
    std::vector<double> mags = group_products(report.spec, w, w);
    for (double& v : mags) v = std::sqrt(v);
    total = std::accumulate(mags.begin(), mags.end(), 0.0);
    report.scores = std::move(mags);
    report.magnitude_fallback = true;
  } else {
    report.scores.resize(report.raw.size());
    for (std::size_t i = 0; i < report.raw.size(); ++i) report.scores[i] = std::abs(report.raw[i]);
  }
  report.normalizer = total;
  if (total > 0.0) {
    for (double& s : report.scores) s /= total;
  }
}

SaliencyReport prospr_scores(const nn::Model& model, const nn::ModelState& state, data::Sampler& sampler,
                             const ProsprOptions& opts) {
  check_steps(opts);
  const auto start = Clock::now();
  SaliencyReport r;
  r.criterion = Criterion::prospr;
  r.steps = opts.steps;
  r.meta_lr = opts.meta_lr;
  r.spec = nn::make_mask_spec(model, opts.granularity);
  const auto problem = model_problem(model, state, r.spec, draw(sampler, opts.steps + 1));
  r.batches_consumed = opts.steps + 1;
  r.raw = unrolled_mask_gradient(problem, opts.steps, opts.meta_lr);
  normalize(r, state);
  r.elapsed_seconds = seconds_since(start);
  return r;
}

SaliencyReport prospr_first_order_scores(const nn::Model& model, const nn::ModelState& state,
                                         data::Sampler& sampler, const ProsprOptions& opts) {
  check_steps(opts);
  const auto start = Clock::now();
  SaliencyReport r;
  r.criterion = Criterion::prospr_first_order;
  r.steps = opts.steps;
  r.meta_lr = opts.meta_lr;
  r.spec = nn::make_mask_spec(model, opts.granularity);
  const auto problem = model_problem(model, state, r.spec, draw(sampler, opts.steps + 1));
  r.batches_consumed = opts.steps + 1;
  r.raw = first_order_mask_gradient(problem, opts.steps, opts.meta_lr);
  normalize(r, state);
  r.elapsed_seconds = seconds_since(start);
  return r;
}

SaliencyReport snip_scores(const nn::Model& model, const nn::ModelState& state, const data::Batch& batch,
                           Granularity granularity) {
  const auto start = Clock::now();
  SaliencyReport r;
  r.criterion = Criterion::snip;
  r.spec = nn::make_mask_spec(model, granularity);
  ad::Graph g(ad::RetainPolicy::truncate);
  const auto params = nn::param_leaves(g, state, false);
  const auto mask = mask_leaves(g, r.spec);
  const ad::Var l = nn::masked_forward(model, r.spec, params, mask, batch);
  r.raw = flatten_mask_grads(ad::backward(l, mask), mask);
  r.batches_consumed = 1;
  normalize(r, state);
  r.elapsed_seconds = seconds_since(start);
  return r;
}

SaliencyReport magnitude_scores(const nn::Model& model, const nn::ModelState& state, Granularity granularity) {
  const auto start = Clock::now();
  SaliencyReport r;
  r.criterion = Criterion::magnitude;
  r.spec = nn::make_mask_spec(model, granularity);
  const auto w = values_of(state);
  r.raw = group_products(r.spec, w, w);
  for (double& v : r.raw) v = std::sqrt(v);
  normalize(r, state);
  r.elapsed_seconds = seconds_since(start);
  return r;
}

SaliencyReport random_scores(const nn::Model& model, Granularity granularity, std::uint64_t seed) {
  SaliencyReport r;
  r.criterion = Criterion::random;
  r.spec = nn::make_mask_spec(model, granularity);
  Rng rng(seed);
  r.raw.resize(r.spec.total_entries());
  for (double& v : r.raw) v = rng.uniform();
  r.normalizer = std::accumulate(r.raw.begin(), r.raw.end(), 0.0);
  r.scores = r.raw;
  for (double& s : r.scores) s /= r.normalizer;
  return r;
}

std::size_t retained_count(double density, std::size_t entries) {
  if (!(density > 0.0 && density <= 1.0)) {
    throw ConfigError("density must lie in (0, 1], got " + std::to_string(density));
  }
  return static_cast<std::size_t>(std::floor(density * static_cast<double>(entries) + 0.5));
}

Mask top_k_mask(const SaliencyReport& report, double density) {
  const std::size_t m = report.scores.size();
  if (m != report.spec.total_entries()) throw ConfigError("saliency report does not match its mask spec");
  const std::size_t k = retained_count(density, m);
  if (k == 0) {
    throw ConfigError("density " + std::to_string(density) + " keeps no entries out of " + std::to_string(m) +
                      "; refusing to prune the whole network");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  const auto& s = report.scores;
  auto better = [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); };
  if (k < m) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), better);
  Mask mask;
  mask.spec = report.spec;
  mask.keep.assign(m, 0);
  for (std::size_t i = 0; i < k; ++i) mask.keep[order[i]] = 1;
  return mask;
}

LayerCollapseReport layer_collapse_report(const Mask& mask, const nn::Model& model) {
  const auto layout = nn::param_layout(model);
  LayerCollapseReport rep;
  const auto offsets = mask.spec.offsets();
  for (std::size_t i = 0; i < mask.spec.groups.size(); ++i) {
    const auto& grp = mask.spec.groups[i];
    if (grp.param_index >= layout.size() || layout[grp.param_index].name != grp.param) {
      throw ConfigError("mask does not fit model " + model.name + ": parameter " + grp.param);
    }
    LayerCollapseReport::Layer layer{grp.param, 0, grp.entries * grp.group_size};
    for (std::size_t e = 0; e < grp.entries; ++e) layer.retained += mask.keep[offsets[i] + e] * grp.group_size;
    if (layer.retained == 0) {
      rep.collapsed = true;
      rep.collapsed_layers.push_back(grp.param);
    }
    rep.layers.push_back(std::move(layer));
  }
  return rep;
}

}  // namespace prospr::pruning

#include "prospr/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prospr/error.hpp"
#include "prospr/random.hpp"

namespace prospr::oracle {

double unrolled_loss(const pruning::UnrollProblem& problem, std::span<const double> mask, std::size_t steps,
                     double lr) {
  const auto& spec = problem.spec;
  if (mask.size() != spec.total_entries()) throw ConfigError("mask has the wrong number of entries");

  std::vector<Tensor> w = problem.params;
  std::size_t at = 0;
  for (const auto& grp : spec.groups) {
    auto d = w[grp.param_index].data();
    for (std::size_t e = 0; e < grp.entries; ++e, ++at) {
      for (std::size_t k = e * grp.group_size; k < (e + 1) * grp.group_size; ++k) d[k] *= mask[at];
    }
  }

  for (std::size_t step = 0;; ++step) {
    ad::Graph g(ad::RetainPolicy::truncate);
    std::vector<ad::Var> vars;
    for (const auto& t : w) vars.push_back(g.leaf(t, true));
    const ad::Var l = problem.loss(vars, step);
    if (step == steps) return l.value().item();
    const auto grads = ad::backward(l, vars);
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto d = w[i].data();
      const auto gd = grads.at(vars[i]).data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * gd[k];
    }
  }
}

std::vector<std::size_t> sample_entries(std::size_t total, const FdConfig& cfg) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (cfg.entries == 0 || cfg.entries >= total) return idx;
  Rng rng(Rng::mix(cfg.seed, 77));
  // Partial Fisher-Yates: the first `entries` slots become the sample.
  for (std::size_t i = 0; i < cfg.entries; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);
  idx.resize(cfg.entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<FdEstimate> fd_meta_gradient(const pruning::UnrollProblem& problem, std::size_t steps, double lr,
                                         const FdConfig& cfg) {
  if (!(cfg.step > 0.0)) throw ConfigError("finite-difference step must be positive");
  const std::size_t m = problem.spec.total_entries();
  std::vector<double> c(m, 1.0);
  auto evaluate = [&](std::uint64_t& fingerprint) {
    ad::ActivationFingerprint fp;
    const double loss = unrolled_loss(problem, c, steps, lr);
    fingerprint = fp.value();
    return loss;
  };
  std::uint64_t center = 0;
  evaluate(center);

  std::vector<FdEstimate> out;
  for (std::size_t j : sample_entries(m, cfg)) {
    try {
      // A ReLU flipping inside [1-h, 1+h] makes the unrolled loss jump (the
      // inner gradients are discontinuous there), so shrink h until neither
      // side changes the activation pattern.
      double h = cfg.step;
      for (std::size_t attempt = 0;; ++attempt) {
        std::uint64_t fp_plus = 0, fp_minus = 0;
        c[j] = 1.0 + h;
        const double plus = evaluate(fp_plus);
        c[j] = 1.0 - h;
        const double minus = evaluate(fp_minus);
        c[j] = 1.0;
        const bool smooth = fp_plus == center && fp_minus == center;
        if (smooth || attempt == cfg.refinements) {
          out.push_back({j, (plus - minus) / (2.0 * h), h, !smooth});
          break;
        }
        h /= 10.0;
      }
    } catch (const NumericError& e) {
      c[j] = 1.0;
      throw NumericError("finite differences for mask entry " + std::to_string(j) + ": " + e.what());
    }
  }
  return out;
}

double symbolic_quadratic_oracle(double x, double y, double w_init, double c, double lr, std::size_t steps) {
  double w = c * w_init;
  for (std::size_t i = 0; i < steps; ++i) w -= lr * x * (w * x - y);
  return (w * x - y) * x * std::pow(1.0 - lr * x * x, static_cast<double>(steps)) * w_init;
}

pruning::UnrollProblem quadratic_problem(double x, double y, double w_init) {
  pruning::UnrollProblem p;
  p.params = {Tensor::scalar(w_init)};
  MaskGroup grp;
  grp.param = "w";
  grp.param_index = 0;
  grp.param_shape = {1};
  grp.entries = 1;
  grp.group_size = 1;
  p.spec.granularity = Granularity::per_weight;
  p.spec.groups = {grp};
  p.loss = [x, y](std::span<const ad::Var> params, std::size_t) {
    ad::Graph& g = params[0].graph();
    const ad::Var r = ad::sub(ad::mul(params[0], g.constant(Tensor::scalar(x))), g.constant(Tensor::scalar(y)));
    return ad::scale(ad::mul(r, r), 0.5);
  };
  return p;
}

double relative_error(double a, double b, double floor) {
  const double diff = std::abs(a - b);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(a), std::abs(b), floor});
}

GradCheckReport compare(std::span<const double> analytic, std::span<const FdEstimate> numeric, double tolerance,
                        double floor_fraction) {
  GradCheckReport rep;
  const double base_step = numeric.empty() ? 0.0 : std::ranges::max(numeric, {}, &FdEstimate::step).step;
  double largest = 0.0;
  for (const auto& e : numeric) largest = std::max(largest, std::abs(analytic[e.entry]));
  rep.floor = floor_fraction * largest;
  std::vector<double> errs;
  for (const auto& e : numeric) {
    const double a = analytic[e.entry];
    const double r = relative_error(a, e.value, rep.floor);
    rep.entries.push_back({e.entry, a, e.value, r, e.step, e.kink});
    rep.refined += e.step < base_step;
    errs.push_back(r);
  }
  if (!errs.empty()) {
    rep.max_rel_error = *std::max_element(errs.begin(), errs.end());
    std::sort(errs.begin(), errs.end());
    const std::size_t n = errs.size();
    rep.median_rel_error = n % 2 ? errs[n / 2] : 0.5 * (errs[n / 2 - 1] + errs[n / 2]);
  }
  rep.passed = !errs.empty() && rep.max_rel_error <= tolerance;
  return rep;
}

}  // namespace prospr::oracle

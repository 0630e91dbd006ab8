#include "prospr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "prospr/error.hpp"
#include "prospr/random.hpp"

namespace prospr::train {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (!(lr0 > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (!(lr_drop_factor > 0.0)) throw ConfigError("train: learning-rate drop factor must be positive");
  if (weight_decay < 0.0) throw ConfigError("train: weight decay must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
  for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] >= epochs) throw ConfigError("train: learning-rate drop epochs must be < epochs");
    if (i && lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
      throw ConfigError("train: learning-rate drop epochs must be strictly increasing");
    }
  }
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double lr = lr0;
  for (auto d : lr_drop_epochs) {
    if (epoch >= d) lr /= lr_drop_factor;
  }
  return lr;
}

std::vector<std::size_t> TrainConfig::default_drops(std::size_t epochs) {
  std::vector<std::size_t> drops;
  for (std::size_t d : {epochs / 2, epochs * 3 / 4}) {
    if (d > 0 && d < epochs && (drops.empty() || d > drops.back())) drops.push_back(d);
  }
  return drops;
}

namespace {

// Random crop from the 4-pixel zero-padded image plus a coin-flip mirror.
void augment_batch(data::Batch& batch, Rng& rng) {
  const Shape& s = batch.inputs.shape();
  if (s.size() != 4) return;
  const std::size_t c = s[1], h = s[2], w = s[3];
  const long pad = 4;
  std::vector<double> img(c * h * w);
  auto d = batch.inputs.data();
  for (std::size_t b = 0; b < s[0]; ++b) {
    double* x = d.data() + b * c * h * w;
    std::copy_n(x, img.size(), img.begin());
    const long dy = static_cast<long>(rng.below(2 * pad + 1)) - pad;
    const long dx = static_cast<long>(rng.below(2 * pad + 1)) - pad;
    const bool flip = rng.below(2) == 1;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const long sy = static_cast<long>(i) + dy;
          const long sj = static_cast<long>(flip ? w - 1 - j : j) + dx;
          const bool inside = sy >= 0 && sj >= 0 && sy < static_cast<long>(h) && sj < static_cast<long>(w);
          x[(ch * h + i) * w + j] = inside ? img[(ch * h + sy) * w + sj] : 0.0;
        }
      }
    }
  }
}

}  // namespace

TrainResult train_pruned(const nn::Model& model, const nn::ModelState& init, const Mask& mask,
                         const data::Dataset& train_set, const data::Dataset* test_set, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&, const nn::ModelState&)>& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw ConfigError("train: training set is empty");
  const auto start = std::chrono::steady_clock::now();

  TrainResult result{nn::apply_mask_to_state(init, mask), {}};
  auto& params = result.state.params;

  // 0/1 multiplier for every parameter entry's gradient.
  std::vector<Tensor> keep;
  for (const auto& p : params) keep.emplace_back(p.value.shape(), 1.0);
  const auto offsets = mask.spec.offsets();
  for (std::size_t i = 0; i < mask.spec.groups.size(); ++i) {
    const auto& grp = mask.spec.groups[i];
    keep[grp.param_index] = mask.expand(i);
    if (mask.spec.granularity == Granularity::per_channel && grp.param_index + 1 < params.size()) {
      auto b = keep[grp.param_index + 1].data();
      for (std::size_t c = 0; c < b.size(); ++c) b[c] = mask.keep[offsets[i] + c];
    }
  }
  std::vector<Tensor> velocity;
  if (cfg.momentum > 0.0) {
    for (const auto& p : params) velocity.emplace_back(p.value.shape());
  }

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  Rng aug_rng(Rng::mix(cfg.seed, 991));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(cfg.seed, epoch));
    rng.shuffle(std::span(order));

    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t at = 0; at < n; at += cfg.batch_size, ++step) {
      const std::size_t len = std::min(cfg.batch_size, n - at);
      data::Batch batch = data::gather(train_set, std::span(order).subspan(at, len));
      if (cfg.augment) augment_batch(batch, aug_rng);

      ad::Graph g(ad::RetainPolicy::truncate);
      const auto vars = nn::param_leaves(g, result.state, true);
      ad::GradientMap grads;
      double loss_value = 0.0;
      try {
        const ad::Var l = nn::loss(model, vars, batch);
        loss_value = l.value().item();
        grads = ad::backward(l, vars);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           ": " + e.what());
      }
      loss_sum += loss_value * static_cast<double>(len);

      for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].value.data();
        const auto gr = grads.at(vars[i]).data();
        const auto k = keep[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
          double d = (gr[j] + cfg.weight_decay * w[j]) * k[j];
          if (cfg.momentum > 0.0) {
            double& v = velocity[i][j];
            v = cfg.momentum * v + d;
            d = v;
          }
          w[j] -= lr * d;
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.test_accuracy = test_set ? evaluate(model, result.state, *test_set) : std::numeric_limits<double>::quiet_NaN();
    result.metrics.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, result.state);
  }
  result.metrics.final_accuracy = result.metrics.epochs.back().test_accuracy;
  result.metrics.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

double evaluate(const nn::Model& model, const nn::ModelState& state, const data::Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("evaluate: dataset is empty");
  constexpr std::size_t kChunk = 1000;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t at = 0; at < ds.size(); at += kChunk) {
    const std::size_t len = std::min(kChunk, ds.size() - at);
    idx.resize(len);
    std::iota(idx.begin(), idx.end(), at);
    const data::Batch batch = data::gather(ds, idx);
    const Tensor z = nn::logits(model, state, batch.inputs);
    const std::size_t k = z.shape()[1];
    for (std::size_t b = 0; b < len; ++b) {
      const auto row = z.data().subspan(b * k, k);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (static_cast<int>(best) == (*batch.labels)[b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace prospr::train

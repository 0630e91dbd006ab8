#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "prospr/data.hpp"
#include "prospr/mask.hpp"
#include "prospr/nn.hpp"

namespace prospr::train {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double lr0 = 0.1;
  std::vector<std::size_t> lr_drop_epochs;  // 0-based epochs at which the rate drops
  double lr_drop_factor = 10.0;
  double weight_decay = 5e-4;
  double momentum = 0.0;
  bool augment = false;  // random 4-pixel-padded crop + horizontal flip for image inputs
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(std::size_t epoch) const;

  /// Drops at 50% and 75% of training, the proportions of the 200-epoch
  /// CIFAR recipe (epochs 100 and 150).
  static std::vector<std::size_t> default_drops(std::size_t epochs);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;  // NaN without a test set
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
  double final_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  nn::ModelState state;
  RunMetrics metrics;
};

/// SGD on w_init with the mask applied. Gradients of pruned entries (and of
/// pruned channels' biases for per-channel masks) are zeroed before every
/// update, so pruned entries stay exactly zero; weight decay touches only
/// retained entries.
TrainResult train_pruned(const nn::Model& model, const nn::ModelState& init, const Mask& mask,
                         const data::Dataset& train_set, const data::Dataset* test_set, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&, const nn::ModelState&)>& on_epoch = {});

/// Fraction of examples whose arg-max logit equals the label.
double evaluate(const nn::Model& model, const nn::ModelState& state, const data::Dataset& ds);

}  // namespace prospr::train

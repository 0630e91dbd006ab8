#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prospr/tensor.hpp"

namespace prospr::data {

enum class Split { train, test };

struct Dataset {
  Tensor inputs;  // [N, ...sample shape]
  std::vector<int> labels;
  std::size_t num_categories = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
};

/// A slice of a dataset. Labels are shared so graphs can hold them cheaply.
struct Batch {
  Tensor inputs;
  std::shared_ptr<const std::vector<int>> labels;

  std::size_t size() const noexcept { return labels ? labels->size() : 0; }
};

/// Reads an IDX image file (magic 0x00000803) and its label file
/// (0x00000801). Pixels are scaled to [0, 1]; images become [N,1,H,W].
/// With num_categories == 0 the count is max label + 1.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Split split,
                 std::size_t num_categories = 0);

/// MNIST from a directory holding the four standard IDX files
/// (train-images-idx3-ubyte, t10k-labels-idx1-ubyte, ...).
Dataset load_mnist(const std::filesystem::path& dir, Split split);

/// CIFAR-10 binary batches: 3073-byte records of label + R,G,B 32x32 planes.
Dataset load_cifar10_binary(std::span<const std::filesystem::path> files, Split split);
Dataset load_cifar10_binary(const std::filesystem::path& file, Split split);

/// data_batch_{1..5}.bin or test_batch.bin from `dir`.
Dataset load_cifar10(const std::filesystem::path& dir, Split split);

struct SyntheticConfig {
  std::size_t num_categories = 10;
  std::size_t per_category = 100;
  std::size_t dim = 20;
  double separation = 4.0;
  std::uint64_t seed = 0;
};

/// Gaussian clusters with unit variance whose means sit `separation` apart.
/// Both splits share the cluster means; samples differ by split.
Dataset make_synthetic(const SyntheticConfig& cfg, Split split = Split::train);

/// Copies the selected examples into a batch.
Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

enum class SamplerMode { shuffled, class_balanced, fixed_single_batch };

struct SamplerConfig {
  std::size_t batch_size = 512;
  SamplerMode mode = SamplerMode::shuffled;
  std::uint64_t seed = 0;
};

/// Draws batches from a dataset that must outlive the sampler. Batch size is
/// clamped to the dataset size.
class Sampler {
 public:
  Sampler(const Dataset& ds, SamplerConfig cfg);

  Batch next();
  std::size_t batch_size() const noexcept { return batch_size_; }
  std::size_t batches_drawn() const noexcept { return drawn_; }

 private:
  std::vector<std::size_t> next_shuffled(std::size_t count);
  std::vector<std::size_t> next_balanced();

  const Dataset* ds_;
  SamplerConfig cfg_;
  std::size_t batch_size_;
  std::size_t drawn_ = 0;

  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;

  std::vector<std::vector<std::size_t>> pools_;
  std::vector<std::size_t> pool_cursor_;
  std::vector<std::size_t> pool_epoch_;
  std::size_t rotation_ = 0;

  std::shared_ptr<Batch> fixed_;
};

SamplerMode parse_sampler_mode(const std::string& name);
std::string to_string(SamplerMode mode);

}  // namespace prospr::data

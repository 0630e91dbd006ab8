#include "prospr/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "prospr/error.hpp"
#include "prospr/random.hpp"

namespace prospr::data {

namespace fs = std::filesystem;

Shape Dataset::sample_shape() const {
  const Shape& s = inputs.shape();
  return Shape(s.begin() + 1, s.end());
}

namespace {

std::size_t infer_categories(const std::vector<int>& labels, std::size_t given) {
  if (given) return given;
  int mx = 0;
  for (int l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx) + 1;
}

}  // namespace

Dataset load_idx(const fs::path& images, const fs::path& labels, Split split, std::size_t num_categories) {
  const auto img_bytes = io::read_file(images);
  io::Reader img(img_bytes, "IDX images '" + images.string() + "'");
  const auto magic = img.u32_be("magic");
  if (magic != 0x00000803) img.fail("bad magic number for an image file", 0);
  const std::size_t n = img.u32_be("image count");
  const std::size_t rows = img.u32_be("row count");
  const std::size_t cols = img.u32_be("column count");
  if (n == 0 || rows == 0 || cols == 0) img.fail("empty image dimensions", 4);
  const auto* pixels = img.take(n * rows * cols, "pixel data");

  const auto lab_bytes = io::read_file(labels);
  io::Reader lab(lab_bytes, "IDX labels '" + labels.string() + "'");
  if (lab.u32_be("magic") != 0x00000801) lab.fail("bad magic number for a label file", 0);
  const std::size_t nl = lab.u32_be("label count");
  if (nl != n) lab.fail("label count " + std::to_string(nl) + " does not match image count " + std::to_string(n), 4);
  const auto* raw_labels = lab.take(n, "label data");

  Dataset ds;
  ds.split = split;
  ds.inputs = Tensor({n, 1, rows, cols});
  auto out = ds.inputs.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pixels[i] / 255.0;
  ds.labels.assign(raw_labels, raw_labels + n);
  ds.num_categories = infer_categories(ds.labels, num_categories);
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<std::size_t>(ds.labels[i]) >= ds.num_categories) {
      lab.fail("label " + std::to_string(ds.labels[i]) + " out of range", 8 + i);
    }
  }
  return ds;
}

Dataset load_mnist(const fs::path& dir, Split split) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  return load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"), split, 10);
}

Dataset load_cifar10_binary(std::span<const fs::path> files, Split split) {
  constexpr std::size_t kPlane = 32 * 32;
  constexpr std::size_t kRecord = 1 + 3 * kPlane;
  std::vector<double> pixels;
  std::vector<int> labels;
  for (const auto& file : files) {
    const auto bytes = io::read_file(file);
    io::Reader r(bytes, "CIFAR-10 batch '" + file.string() + "'");
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      r.fail("size " + std::to_string(bytes.size()) + " is not a positive multiple of the 3073-byte record",
             bytes.size() - bytes.size() % kRecord);
    }
    while (!r.at_end()) {
      const auto at = r.offset();
      const int label = r.u8("label");
      if (label > 9) r.fail("label " + std::to_string(label) + " out of range", at);
      labels.push_back(label);
      const auto* p = r.take(3 * kPlane, "pixels");
      for (std::size_t i = 0; i < 3 * kPlane; ++i) pixels.push_back(p[i] / 255.0);
    }
  }
  if (labels.empty()) throw Error("CIFAR-10: no batch files given");
  Dataset ds;
  ds.split = split;
  ds.inputs = Tensor({labels.size(), 3, 32, 32}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.num_categories = 10;
  return ds;
}

Dataset load_cifar10_binary(const fs::path& file, Split split) {
  return load_cifar10_binary(std::span<const fs::path>(&file, 1), split);
}

Dataset load_cifar10(const fs::path& dir, Split split) {
  std::vector<fs::path> files;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  return load_cifar10_binary(files, split);
}

Dataset make_synthetic(const SyntheticConfig& cfg, Split split) {
  if (cfg.num_categories < 1 || cfg.per_category < 1 || cfg.dim < 1) {
    throw ConfigError("synthetic data needs at least one category, sample and dimension");
  }
  const std::size_t k = cfg.num_categories, d = cfg.dim;
  // Means at distance separation from each other: scaled basis vectors when
  // they fit, otherwise random unit directions.
  std::vector<double> means(k * d, 0.0);
  const double radius = cfg.separation / std::sqrt(2.0);
  if (k <= d) {
    for (std::size_t c = 0; c < k; ++c) means[c * d + c] = radius;
  } else {
    Rng rng(Rng::mix(cfg.seed, 0));
    for (std::size_t c = 0; c < k; ++c) {
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        means[c * d + j] = rng.normal();
        norm += means[c * d + j] * means[c * d + j];
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < d; ++j) means[c * d + j] *= radius / norm;
    }
  }

  Rng rng(Rng::mix(cfg.seed, split == Split::train ? 1 : 2));
  const std::size_t n = k * cfg.per_category;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span(order));

  Dataset ds;
  ds.split = split;
  ds.num_categories = k;
  ds.inputs = Tensor({n, d});
  ds.labels.resize(n);
  auto x = ds.inputs.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = order[i] % k;
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = means[c * d + j] + rng.normal();
  }
  return ds;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("cannot build an empty batch");
  const Shape sample = ds.sample_shape();
  const std::size_t stride = shape_numel(sample);
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample.begin(), sample.end());
  Tensor inputs(shape);
  auto labels = std::make_shared<std::vector<int>>();
  labels->reserve(indices.size());
  auto src = ds.inputs.data();
  auto dst = inputs.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t j = indices[i];
    if (j >= ds.size()) throw ConfigError("batch index " + std::to_string(j) + " out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(j * stride), stride,
                dst.begin() + static_cast<std::ptrdiff_t>(i * stride));
    labels->push_back(ds.labels[j]);
  }
  return Batch{std::move(inputs), std::move(labels)};
}

Sampler::Sampler(const Dataset& ds, SamplerConfig cfg) : ds_(&ds), cfg_(cfg) {
  if (ds.size() == 0) throw ConfigError("sampler: dataset is empty");
  if (cfg.batch_size == 0) throw ConfigError("sampler: batch size must be positive");
  batch_size_ = std::min(cfg.batch_size, ds.size());
  if (cfg.mode == SamplerMode::class_balanced) {
    if (batch_size_ < ds.num_categories) {
      throw ConfigError("class-balanced sampling needs batch size >= number of categories (" +
                        std::to_string(batch_size_) + " < " + std::to_string(ds.num_categories) + ")");
    }
    pools_.resize(ds.num_categories);
    for (std::size_t i = 0; i < ds.size(); ++i) pools_[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    for (std::size_t c = 0; c < pools_.size(); ++c) {
      if (pools_[c].empty()) {
        throw ConfigError("class-balanced sampling: category " + std::to_string(c) + " has no examples");
      }
      Rng rng(Rng::mix(cfg.seed, 1000 + c));
      rng.shuffle(std::span(pools_[c]));
    }
    pool_cursor_.assign(pools_.size(), 0);
    pool_epoch_.assign(pools_.size(), 0);
  }
}

std::vector<std::size_t> Sampler::next_shuffled(std::size_t count) {
  std::vector<std::size_t> idx;
  idx.reserve(count);
  while (idx.size() < count) {
    if (cursor_ == order_.size()) {
      order_.resize(ds_->size());
      std::iota(order_.begin(), order_.end(), 0);
      Rng rng(Rng::mix(cfg_.seed, epoch_++));
      rng.shuffle(std::span(order_));
      cursor_ = 0;
    }
    idx.push_back(order_[cursor_++]);
  }
  return idx;
}

std::vector<std::size_t> Sampler::next_balanced() {
  const std::size_t k = pools_.size();
  const std::size_t base = batch_size_ / k;
  const std::size_t extra = batch_size_ % k;
  std::vector<std::size_t> idx;
  idx.reserve(batch_size_);
  for (std::size_t c = 0; c < k; ++c) {
    const bool bonus = (c + k - rotation_ % k) % k < extra;
    auto& pool = pools_[c];
    for (std::size_t t = 0; t < base + (bonus ? 1 : 0); ++t) {
      if (pool_cursor_[c] == pool.size()) {
        Rng rng(Rng::mix(cfg_.seed, 1000 + c + k * ++pool_epoch_[c]));
        rng.shuffle(std::span(pool));
        pool_cursor_[c] = 0;
      }
      idx.push_back(pool[pool_cursor_[c]++]);
    }
  }
  rotation_ += extra;
  return idx;
}

Batch Sampler::next() {
  ++drawn_;
  switch (cfg_.mode) {
    case SamplerMode::shuffled: {
      const auto idx = next_shuffled(batch_size_);
      return gather(*ds_, idx);
    }
    case SamplerMode::class_balanced: {
      const auto idx = next_balanced();
      return gather(*ds_, idx);
    }
    case SamplerMode::fixed_single_batch: {
      if (!fixed_) {
        const auto idx = next_shuffled(batch_size_);
        fixed_ = std::make_shared<Batch>(gather(*ds_, idx));
      }
      return *fixed_;
    }
  }
  throw ConfigError("sampler: unknown mode");
}

SamplerMode parse_sampler_mode(const std::string& name) {
  if (name == "shuffled") return SamplerMode::shuffled;
  if (name == "class-balanced" || name == "balanced") return SamplerMode::class_balanced;
  if (name == "fixed-single-batch" || name == "fixed") return SamplerMode::fixed_single_batch;
  throw ConfigError("unknown sampler mode '" + name + "' (shuffled|class-balanced|fixed-single-batch)");
}

std::string to_string(SamplerMode mode) {
  switch (mode) {
    case SamplerMode::shuffled: return "shuffled";
    case SamplerMode::class_balanced: return "class-balanced";
    case SamplerMode::fixed_single_batch: return "fixed-single-batch";
  }
  return "?";
}

}  // namespace prospr::data

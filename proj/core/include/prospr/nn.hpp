#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prospr/autodiff.hpp"
#include "prospr/data.hpp"
#include "prospr/mask.hpp"
#include "prospr/tensor.hpp"

namespace prospr::nn {

enum class LayerKind { linear, conv2d, relu, avg_pool, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   // features (linear) or channels (conv2d)
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t window = 0;  // avg_pool

  bool has_params() const noexcept { return kind == LayerKind::linear || kind == LayerKind::conv2d; }

  static LayerSpec linear(std::size_t in, std::size_t out) { return {LayerKind::linear, in, out}; }
  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                        std::size_t pad = 0) {
    return {LayerKind::conv2d, in, out, kernel, stride, pad};
  }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec avg_pool(std::size_t window) { return {LayerKind::avg_pool, 0, 0, 0, 1, 0, window}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
};

struct Model {
  std::string name;
  Shape input_shape;  // per example
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;
};

/// Fully connected ReLU network; dims = {in, hidden..., classes}.
Model make_mlp(std::vector<std::size_t> dims, Shape input_shape = {});

/// Six 3x3 conv layers in three stages with 2x2 average pooling between
/// stages, then global average pooling and one linear classifier.
Model make_conv6(std::size_t in_channels, std::size_t image_size, std::size_t num_classes,
                 std::vector<std::size_t> widths = {16, 32, 64});

/// "mlp:784-300-100-10", "mlp" (hidden 300-100 sized to the data) or "conv6".
Model parse_model(const std::string& spec, const Shape& input_shape, std::size_t num_classes);

/// Per-example activation shape after each layer. Throws ShapeError when
/// consecutive layers do not fit together.
std::vector<Shape> activation_shapes(const Model& model);

struct Param {
  std::string name;
  Tensor value;
  bool prunable = false;  // weights of linear/conv layers; never biases
  std::size_t layer = 0;
};

struct ModelState {
  std::vector<Param> params;  // weight then bias for each layer with parameters

  const Param& find(const std::string& name) const;
  std::size_t count() const;  // total scalar parameters
};

/// Parameter names and shapes in state order.
std::vector<Param> param_layout(const Model& model);

/// Kaiming-style uniform weights U(-sqrt(2/fan_in), sqrt(2/fan_in)) and zero
/// biases. Each parameter draws from its own seeded stream.
ModelState init_params(const Model& model, std::uint64_t seed);

/// Loads a checkpoint and checks it against the model's parameter layout.
ModelState load_params(const Model& model, const std::filesystem::path& path);

/// "PRPRCKPT" checkpoint: header, then name/dtype/rank/extents/raw values per
/// parameter, all little-endian.
void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path);

MaskSpec make_mask_spec(const Model& model, Granularity granularity);

/// Logits for a batch of inputs given parameter variables in state order.
ad::Var forward(const Model& model, std::span<const ad::Var> params, const ad::Var& inputs);

/// Mean cross-entropy of the model on a batch.
ad::Var loss(const Model& model, std::span<const ad::Var> params, const data::Batch& batch);

/// Effective parameters c * w for prunable weights; biases pass through.
std::vector<ad::Var> apply_mask(const MaskSpec& spec, std::span<const ad::Var> params,
                                std::span<const ad::Var> mask);

/// Loss of the model with mask variables attached multiplicatively.
ad::Var masked_forward(const Model& model, const MaskSpec& spec, std::span<const ad::Var> params,
                       std::span<const ad::Var> mask, const data::Batch& batch);

/// Adds every parameter of `state` to `graph` as a leaf.
std::vector<ad::Var> param_leaves(ad::Graph& graph, const ModelState& state, bool requires_grad);

/// Plain evaluation of logits, no gradients.
Tensor logits(const Model& model, const ModelState& state, const Tensor& inputs);

/// w_init with pruned entries zeroed (and, for per-channel masks, the biases
/// of pruned channels).
ModelState apply_mask_to_state(const ModelState& state, const Mask& mask);

/// Physically removes channels/units whose per-channel mask entry is 0 and the
/// matching inputs of the next layer. The output layer keeps its width; its
/// pruned rows stay as zeros. Requires pruned hidden channels to have zero
/// bias so the result computes exactly what the masked model computes.
std::pair<Model, ModelState> shrink(const Model& model, const ModelState& state, const Mask& mask);

std::string to_string(LayerKind kind);

}  // namespace prospr::nn

#include "prospr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "binary_io.hpp"
#include "prospr/error.hpp"
#include "prospr/random.hpp"

namespace prospr::nn {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kCkptMagic = "PRPRCKPT";
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

std::string layer_prefix(std::size_t index, LayerKind kind) {
  std::ostringstream os;
  os << "layer" << (index < 10 ? "0" : "") << index << '.' << to_string(kind);
  return os.str();
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, '-')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoul(tok, &used);
      if (used != tok.size() || v == 0) throw std::invalid_argument(tok);
      dims.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("model spec: bad dimension '" + tok + "' in '" + text + "'");
    }
  }
  return dims;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::avg_pool: return "avgpool";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

Model make_mlp(std::vector<std::size_t> dims, Shape input_shape) {
  if (dims.size() < 2) throw ConfigError("mlp needs at least input and output widths");
  Model m;
  std::ostringstream name;
  name << "mlp:";
  for (std::size_t i = 0; i < dims.size(); ++i) name << (i ? "-" : "") << dims[i];
  m.name = name.str();
  m.input_shape = input_shape.empty() ? Shape{dims.front()} : std::move(input_shape);
  m.num_classes = dims.back();
  if (m.input_shape.size() > 1) m.layers.push_back(LayerSpec::flatten());
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    m.layers.push_back(LayerSpec::linear(dims[i], dims[i + 1]));
    if (i + 2 < dims.size()) m.layers.push_back(LayerSpec::relu());
  }
  activation_shapes(m);
  return m;
}

Model make_conv6(std::size_t in_channels, std::size_t image_size, std::size_t num_classes,
                 std::vector<std::size_t> widths) {
  if (widths.size() != 3) throw ConfigError("conv6 takes three stage widths");
  if (image_size % 4 != 0) throw ConfigError("conv6 needs an image size divisible by 4");
  Model m;
  m.name = "conv6";
  m.input_shape = {in_channels, image_size, image_size};
  m.num_classes = num_classes;
  std::size_t c = in_channels;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    for (int rep = 0; rep < 2; ++rep) {
      m.layers.push_back(LayerSpec::conv(c, widths[stage], 3, 1, 1));
      m.layers.push_back(LayerSpec::relu());
      c = widths[stage];
    }
    m.layers.push_back(LayerSpec::avg_pool(stage < 2 ? 2 : image_size / 4));
  }
  m.layers.push_back(LayerSpec::flatten());
  m.layers.push_back(LayerSpec::linear(c, num_classes));
  activation_shapes(m);
  return m;
}

Model parse_model(const std::string& spec, const Shape& input_shape, std::size_t num_classes) {
  const std::size_t in = shape_numel(input_shape);
  if (spec == "mlp") return make_mlp({in, 300, 100, num_classes}, input_shape);
  if (spec.rfind("mlp:", 0) == 0) {
    auto dims = parse_dims(spec.substr(4));
    if (dims.size() < 2) throw ConfigError("model spec '" + spec + "' needs at least two widths");
    if (dims.front() != in || dims.back() != num_classes) {
      throw ConfigError("model spec '" + spec + "' does not match data with " + std::to_string(in) +
                        " features and " + std::to_string(num_classes) + " classes");
    }
    return make_mlp(std::move(dims), input_shape);
  }
  if (spec == "conv6") {
    if (input_shape.size() != 3 || input_shape[1] != input_shape[2]) {
      throw ConfigError("conv6 needs square image inputs, got " + shape_str(input_shape));
    }
    return make_conv6(input_shape[0], input_shape[1], num_classes);
  }
  throw ConfigError("unknown model '" + spec + "' (mlp, mlp:<dims>, conv6)");
}

std::vector<Shape> activation_shapes(const Model& model) {
  std::vector<Shape> shapes;
  Shape cur = model.input_shape;
  auto fail = [&](std::size_t i, const std::string& why) {
    throw ShapeError("model " + model.name + ": layer " + std::to_string(i) + " (" + to_string(model.layers[i].kind) +
                     ") cannot take input " + shape_str(cur) + ": " + why);
  };
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    switch (l.kind) {
      case LayerKind::linear:
        if (cur.size() != 1 || cur[0] != l.in) fail(i, "expected " + std::to_string(l.in) + " features");
        cur = {l.out};
        break;
      case LayerKind::conv2d: {
        if (cur.size() != 3 || cur[0] != l.in) fail(i, "expected " + std::to_string(l.in) + " channels");
        if (cur[1] + 2 * l.pad < l.kernel || cur[2] + 2 * l.pad < l.kernel) fail(i, "kernel too large");
        cur = {l.out, (cur[1] + 2 * l.pad - l.kernel) / l.stride + 1, (cur[2] + 2 * l.pad - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::avg_pool:
        if (cur.size() != 3 || l.window == 0 || cur[1] % l.window || cur[2] % l.window) fail(i, "bad pooling window");
        cur = {cur[0], cur[1] / l.window, cur[2] / l.window};
        break;
      case LayerKind::flatten:
        cur = {shape_numel(cur)};
        break;
    }
    shapes.push_back(cur);
  }
  if (cur != Shape{model.num_classes}) {
    throw ShapeError("model " + model.name + ": output " + shape_str(cur) + " does not match " +
                     std::to_string(model.num_classes) + " classes");
  }
  return shapes;
}

const Param& ModelState::find(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

std::size_t ModelState::count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

std::vector<Param> param_layout(const Model& model) {
  std::vector<Param> layout;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!l.has_params()) continue;
    const std::string prefix = layer_prefix(i, l.kind);
    const Shape w = l.kind == LayerKind::linear ? Shape{l.out, l.in} : Shape{l.out, l.in, l.kernel, l.kernel};
    layout.push_back({prefix + ".weight", Tensor(w), true, i});
    layout.push_back({prefix + ".bias", Tensor({l.out}), false, i});
  }
  return layout;
}

ModelState init_params(const Model& model, std::uint64_t seed) {
  ModelState state{param_layout(model)};
  for (std::size_t p = 0; p < state.params.size(); ++p) {
    auto& param = state.params[p];
    if (!param.prunable) continue;
    const Shape& s = param.value.shape();
    const std::size_t fan_in = param.value.size() / s[0];
    const double bound = std::sqrt(2.0 / static_cast<double>(fan_in));
    Rng rng(Rng::mix(seed, p));
    for (double& v : param.value.data()) v = rng.uniform(-bound, bound);
  }
  return state;
}

void save_checkpoint(const fs::path& path, const ModelState& state) {
  io::Writer w;
  w.bytes(kCkptMagic);
  w.u32_le(kCkptVersion);
  w.u32_le(static_cast<std::uint32_t>(state.params.size()));
  for (const auto& p : state.params) {
    w.u32_le(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u8(kDtypeF64);
    w.u32_le(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u64_le(d);
    for (double v : p.value.data()) w.f64_le(v);
  }
  io::write_file(path, w.buffer());
}

ModelState load_checkpoint(const fs::path& path) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes, "checkpoint '" + path.string() + "'");
  if (r.str(kCkptMagic.size(), "magic") != kCkptMagic) r.fail("bad magic, expected PRPRCKPT", 0);
  const auto ver_at = r.offset();
  if (r.u32_le("version") != kCkptVersion) r.fail("unsupported format version", ver_at);
  const auto count = r.u32_le("parameter count");
  ModelState state;
  for (std::uint32_t i = 0; i < count; ++i) {
    Param p;
    const auto len = r.u32_le("name length");
    p.name = r.str(len, "name");
    const auto dtype_at = r.offset();
    if (r.u8("dtype") != kDtypeF64) r.fail("unsupported dtype for '" + p.name + "'", dtype_at);
    const auto rank_at = r.offset();
    const auto rank = r.u32_le("rank");
    if (rank == 0 || rank > 8) r.fail("implausible rank " + std::to_string(rank), rank_at);
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto at = r.offset();
      shape.push_back(r.u64_le("extent"));
      if (shape.back() == 0) r.fail("zero extent", at);
    }
    const std::size_t n = shape_numel(shape);
    r.need(n * 8, "values of '" + p.name + "'");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64_le("value");
    p.value = Tensor(std::move(shape), std::move(values));
    state.params.push_back(std::move(p));
  }
  if (!r.at_end()) r.fail("trailing bytes after last parameter", r.offset());
  return state;
}

ModelState load_params(const Model& model, const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("initial weights file '" + path.string() + "' does not exist");
  ModelState loaded = load_checkpoint(path);
  ModelState state{param_layout(model)};
  std::vector<std::string> problems;
  for (auto& p : state.params) {
    auto it = std::find_if(loaded.params.begin(), loaded.params.end(), [&](const Param& q) { return q.name == p.name; });
    if (it == loaded.params.end()) {
      problems.push_back(p.name + " (missing)");
    } else if (it->value.shape() != p.value.shape()) {
      problems.push_back(p.name + " (shape " + shape_str(it->value.shape()) + ", expected " +
                         shape_str(p.value.shape()) + ")");
    } else {
      p.value = it->value;
    }
  }
  if (loaded.params.size() != state.params.size() && problems.empty()) {
    problems.push_back("unexpected extra parameters in file");
  }
  if (!problems.empty()) {
    std::string msg = "initial weights '" + path.string() + "' do not fit model " + model.name + ":";
    for (const auto& s : problems) msg += " " + s + ";";
    throw ConfigError(msg);
  }
  return state;
}

MaskSpec make_mask_spec(const Model& model, Granularity granularity) {
  MaskSpec spec;
  spec.granularity = granularity;
  const auto layout = param_layout(model);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (!layout[i].prunable) continue;
    MaskGroup g;
    g.param = layout[i].name;
    g.param_index = i;
    g.param_shape = layout[i].value.shape();
    const std::size_t n = layout[i].value.size();
    g.entries = granularity == Granularity::per_weight ? n : g.param_shape[0];
    g.group_size = n / g.entries;
    spec.groups.push_back(std::move(g));
  }
  return spec;
}

ad::Var forward(const Model& model, std::span<const ad::Var> params, const ad::Var& inputs) {
  ad::Var x = inputs;
  std::size_t p = 0;
  for (const auto& l : model.layers) {
    switch (l.kind) {
      case LayerKind::linear: {
        if (x.shape().size() != 2) throw ShapeError("linear layer expects [batch, features], got " + shape_str(x.shape()));
        const ad::Var y = ad::matmul(x, params[p], false, true);
        x = ad::add(y, ad::broadcast_axis(params[p + 1], y.shape(), 1));
        p += 2;
        break;
      }
      case LayerKind::conv2d: {
        const ad::Var y = ad::conv2d(x, params[p], l.stride, l.pad);
        x = ad::add(y, ad::broadcast_axis(params[p + 1], y.shape(), 1));
        p += 2;
        break;
      }
      case LayerKind::relu:
        x = ad::relu(x);
        break;
      case LayerKind::avg_pool:
        x = ad::avg_pool2d(x, l.window);
        break;
      case LayerKind::flatten: {
        const Shape& s = x.shape();
        x = ad::reshape(x, {s[0], x.value().size() / s[0]});
        break;
      }
    }
  }
  if (p != params.size()) {
    throw ShapeError("model " + model.name + " uses " + std::to_string(p) + " parameters, got " +
                     std::to_string(params.size()));
  }
  return x;
}

ad::Var loss(const Model& model, std::span<const ad::Var> params, const data::Batch& batch) {
  if (params.empty()) throw ShapeError("loss: no parameters");
  ad::Graph& g = params.front().graph();
  const ad::Var x = g.constant(batch.inputs);
  return ad::softmax_cross_entropy(forward(model, params, x), batch.labels);
}

std::vector<ad::Var> apply_mask(const MaskSpec& spec, std::span<const ad::Var> params, std::span<const ad::Var> mask) {
  if (mask.size() != spec.groups.size()) {
    throw ShapeError("apply_mask: " + std::to_string(mask.size()) + " mask tensors for " +
                     std::to_string(spec.groups.size()) + " prunable parameters");
  }
  std::vector<ad::Var> out(params.begin(), params.end());
  for (std::size_t i = 0; i < spec.groups.size(); ++i) {
    const auto& grp = spec.groups[i];
    if (grp.param_index >= params.size()) throw ShapeError("apply_mask: mask refers to a missing parameter");
    const ad::Var& w = params[grp.param_index];
    if (w.shape() != grp.param_shape) {
      throw ShapeError("apply_mask: parameter " + grp.param + " has shape " + shape_str(w.shape()) +
                       " but the mask spec expects " + shape_str(grp.param_shape));
    }
    if (mask[i].shape() != spec.entry_shape(i)) {
      throw ShapeError("apply_mask: mask for " + grp.param + " has shape " + shape_str(mask[i].shape()) +
                       ", granularity " + to_string(spec.granularity) + " needs " + shape_str(spec.entry_shape(i)));
    }
    out[grp.param_index] = spec.granularity == Granularity::per_weight
                               ? ad::mul(w, mask[i])
                               : ad::mul(w, ad::broadcast_axis(mask[i], w.shape(), 0));
  }
  return out;
}

ad::Var masked_forward(const Model& model, const MaskSpec& spec, std::span<const ad::Var> params,
                       std::span<const ad::Var> mask, const data::Batch& batch) {
  const auto effective = apply_mask(spec, params, mask);
  return loss(model, effective, batch);
}

std::vector<ad::Var> param_leaves(ad::Graph& graph, const ModelState& state, bool requires_grad) {
  std::vector<ad::Var> vars;
  vars.reserve(state.params.size());
  for (const auto& p : state.params) vars.push_back(graph.leaf(p.value, requires_grad, p.name));
  return vars;
}

Tensor logits(const Model& model, const ModelState& state, const Tensor& inputs) {
  ad::Graph g(ad::RetainPolicy::truncate);
  const auto params = param_leaves(g, state, false);
  return forward(model, params, g.constant(inputs)).value();
}

ModelState apply_mask_to_state(const ModelState& state, const Mask& mask) {
  ModelState out = state;
  for (std::size_t i = 0; i < mask.spec.groups.size(); ++i) {
    const auto& grp = mask.spec.groups[i];
    if (grp.param_index >= out.params.size() || out.params[grp.param_index].name != grp.param ||
        out.params[grp.param_index].value.shape() != grp.param_shape) {
      throw ConfigError("mask does not fit the model: parameter " + grp.param);
    }
    const Tensor keep = mask.expand(i);
    auto w = out.params[grp.param_index].value.data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] *= keep[j];
    if (mask.spec.granularity == Granularity::per_channel && grp.param_index + 1 < out.params.size()) {
      auto b = out.params[grp.param_index + 1].value.data();
      const std::size_t off = mask.spec.offsets()[i];
      for (std::size_t c = 0; c < b.size(); ++c) b[c] *= mask.keep[off + c];
    }
  }
  return out;
}

std::pair<Model, ModelState> shrink(const Model& model, const ModelState& state, const Mask& mask) {
  if (mask.spec.granularity != Granularity::per_channel) throw ConfigError("shrink needs a per-channel mask");
  const auto offsets = mask.spec.offsets();
  const auto shapes = activation_shapes(model);

  std::size_t last_param_layer = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].has_params()) last_param_layer = i;
  }

  Model small = model;
  small.name = model.name + "-shrunk";
  ModelState out;

  // Indices of the input channels/features of the current activation that survive.
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < (model.input_shape.size() == 3 ? model.input_shape[0] : shape_numel(model.input_shape)); ++c) {
    kept.push_back(c);
  }
  Shape cur = model.input_shape;
  std::size_t group = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = small.layers[i];
    if (layer.kind == LayerKind::flatten) {
      const std::size_t per = cur.size() == 3 ? cur[1] * cur[2] : 1;
      std::vector<std::size_t> features;
      for (auto c : kept) {
        for (std::size_t s = 0; s < per; ++s) features.push_back(c * per + s);
      }
      kept = std::move(features);
    }
    if (layer.has_params()) {
      const Param& w = state.params[2 * group];
      const Param& b = state.params[2 * group + 1];
      const auto& grp = mask.spec.groups.at(group);
      if (grp.param != w.name) throw ConfigError("mask does not fit the model: parameter " + w.name);
      const bool is_output = i == last_param_layer;

      std::vector<std::size_t> rows;
      for (std::size_t r = 0; r < grp.entries; ++r) {
        if (mask.keep[offsets[group] + r] || is_output) rows.push_back(r);
        if (!mask.keep[offsets[group] + r] && !is_output && b.value[r] != 0.0) {
          throw ConfigError("cannot remove channel " + std::to_string(r) + " of " + w.name +
                            ": its bias is nonzero");
        }
      }
      const std::size_t in_full = w.value.shape()[1];
      const std::size_t spatial = w.value.size() / (w.value.shape()[0] * in_full);
      Shape ws = w.value.shape();
      ws[0] = rows.size();
      ws[1] = kept.size();
      Tensor nw(ws);
      Tensor nb({rows.size()});
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const double keep_row = mask.keep[offsets[group] + rows[r]] ? 1.0 : 0.0;
        nb[r] = b.value[rows[r]];
        for (std::size_t c = 0; c < kept.size(); ++c) {
          for (std::size_t s = 0; s < spatial; ++s) {
            nw[(r * kept.size() + c) * spatial + s] = keep_row * w.value[(rows[r] * in_full + kept[c]) * spatial + s];
          }
        }
      }
      layer.in = kept.size();
      layer.out = rows.size();
      out.params.push_back({w.name, std::move(nw), true, i});
      out.params.push_back({b.name, std::move(nb), false, i});
      kept = rows;
      ++group;
    }
    cur = shapes[i];
  }
  small.input_shape = model.input_shape;
  activation_shapes(small);
  return {std::move(small), std::move(out)};
}

}  // namespace prospr::nn

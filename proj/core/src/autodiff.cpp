#include "prospr/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>

#include "adjoint.hpp"
#include "prospr/error.hpp"

namespace prospr::ad {

namespace {

constexpr NodeId kNone = std::numeric_limits<NodeId>::max();

struct Corruption {
  std::mutex mu;
  bool active = false;
  OpKind kind = OpKind::leaf;
  double factor = 1.0;
};

Corruption& corruption() {
  static Corruption c;
  return c;
}

thread_local ActivationFingerprint* innermost_fingerprint = nullptr;

}  // namespace

ActivationFingerprint::ActivationFingerprint() : previous_(innermost_fingerprint) { innermost_fingerprint = this; }

ActivationFingerprint::~ActivationFingerprint() { innermost_fingerprint = previous_; }

ActivationFingerprint* ActivationFingerprint::active() noexcept { return innermost_fingerprint; }

void ActivationFingerprint::fold(std::span<const double> pre_activation) noexcept {
  // FNV-1a over 64-bit words of on/off bits, then the length.
  auto mix = [this](std::uint64_t word) {
    hash_ ^= word;
    hash_ *= 0x100000001b3ULL;
  };
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < pre_activation.size(); ++i) {
    word |= static_cast<std::uint64_t>(pre_activation[i] > 0.0) << (i % 64);
    if (i % 64 == 63) {
      mix(word);
      word = 0;
    }
  }
  mix(word);
  mix(pre_activation.size());
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::severed: return "severed";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::conv2d_input_grad: return "conv2d_input_grad";
    case OpKind::conv2d_weight_grad: return "conv2d_weight_grad";
    case OpKind::avg_pool2d: return "avg_pool2d";
    case OpKind::avg_pool2d_grad: return "avg_pool2d_grad";
    case OpKind::relu: return "relu";
    case OpKind::relu_mask: return "relu_mask";
    case OpKind::reshape: return "reshape";
    case OpKind::broadcast_axis: return "broadcast_axis";
    case OpKind::reduce_axis: return "reduce_axis";
    case OpKind::expand_scalar: return "expand_scalar";
    case OpKind::sum_all: return "sum_all";
    case OpKind::softmax: return "softmax";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

const Node& Var::node() const {
  if (!graph_) throw GraphError("use of an unbound variable");
  return graph_->node(id_);
}

Var Graph::var(NodeId id) {
  if (id >= nodes_.size()) throw GraphError("node id " + std::to_string(id) + " out of range");
  return Var(this, id);
}

Var Graph::record(OpKind kind, std::vector<NodeId> inputs, OpAttrs attrs, Tensor value) {
  if (!value.all_finite()) {
    throw NumericError("op '" + std::string(op_name(kind)) + "' produced a non-finite value");
  }
  bool rg = false;
  if (grad_enabled_) {
    for (NodeId i : inputs) rg = rg || nodes_[i].requires_grad;
  }
  Node& n = nodes_.emplace_back();
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.attrs = std::move(attrs);
  n.value = std::move(value);
  n.requires_grad = rg;
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor value, bool requires_grad, std::string name) {
  if (!value.all_finite()) throw NumericError("leaf '" + name + "' holds a non-finite value");
  Node& n = nodes_.emplace_back();
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.name = std::move(name);
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value, std::string name) {
  Var v = leaf(std::move(value), false, std::move(name));
  nodes_.back().kind = OpKind::constant;
  return v;
}

std::shared_ptr<const std::vector<NodeId>> Graph::reachable_leaves(std::span<const NodeId> roots) const {
  if (roots.empty()) return std::make_shared<const std::vector<NodeId>>();
  const NodeId hi = *std::max_element(roots.begin(), roots.end());
  std::vector<char> seen(hi + 1, 0);
  for (NodeId r : roots) seen[r] = 1;
  std::vector<NodeId> leaves;
  for (NodeId n = hi + 1; n-- > 0;) {
    if (!seen[n]) continue;
    const Node& node = nodes_[n];
    if (!node.requires_grad) continue;
    if (node.kind == OpKind::leaf || node.kind == OpKind::severed) leaves.push_back(n);
    if (node.cut_leaves) leaves.insert(leaves.end(), node.cut_leaves->begin(), node.cut_leaves->end());
    for (NodeId i : node.inputs) seen[i] = 1;
  }
  std::sort(leaves.begin(), leaves.end());
  leaves.erase(std::unique(leaves.begin(), leaves.end()), leaves.end());
  return std::make_shared<const std::vector<NodeId>>(std::move(leaves));
}

Var Graph::detach(const Var& x, bool requires_grad) {
  if (&x.graph() != this) throw GraphError("detach: variable belongs to another graph");
  const NodeId root = x.id();
  auto cut = reachable_leaves(std::span<const NodeId>(&root, 1));
  Var v = leaf(x.value(), requires_grad, x.node().name);
  nodes_.back().kind = OpKind::severed;
  nodes_.back().cut_leaves = std::move(cut);
  return v;
}

Var Graph::sgd_update(const Var& w, const Var& grad, double lr, bool requires_grad) {
  if (policy_ == RetainPolicy::keep_history) return sub(w, scale(grad, lr));

  if (w.shape() != grad.shape()) {
    throw ShapeError("sgd_update: weight " + shape_str(w.shape()) + " vs gradient " + shape_str(grad.shape()));
  }
  const std::vector<NodeId> roots{w.id(), grad.id()};
  auto cut = reachable_leaves(roots);
  Tensor next = w.value();
  auto gv = grad.value().data();
  auto nv = next.data();
  for (std::size_t i = 0; i < nv.size(); ++i) nv[i] -= lr * gv[i];
  Var v = leaf(std::move(next), requires_grad, w.node().name);
  nodes_.back().kind = OpKind::severed;
  nodes_.back().cut_leaves = std::move(cut);
  return v;
}

void Graph::truncate(std::size_t n) {
  while (nodes_.size() > n) nodes_.pop_back();
}

struct GraphAccess {
  static bool& grad_enabled(Graph& g) { return g.grad_enabled_; }
  static void truncate(Graph& g, std::size_t n) { g.truncate(n); }
};

namespace {

// Restores the graph's size and recording mode when a numeric backward ends.
class NumericScope {
 public:
  explicit NumericScope(Graph& g) : g_(g), size_(g.size()), enabled_(GraphAccess::grad_enabled(g)) {
    GraphAccess::grad_enabled(g_) = false;
  }
  ~NumericScope() {
    GraphAccess::truncate(g_, size_);
    GraphAccess::grad_enabled(g_) = enabled_;
  }
  NumericScope(const NumericScope&) = delete;
  NumericScope& operator=(const NumericScope&) = delete;

 private:
  Graph& g_;
  std::size_t size_;
  bool enabled_;
};

void validate_request(const Var& loss, std::span<const Var> wrt) {
  if (!loss.valid()) throw GraphError("backward: loss variable is unbound");
  if (loss.value().size() != 1) {
    throw GraphError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  Graph& g = loss.graph();
  for (const Var& v : wrt) {
    if (!v.valid() || &v.graph() != &g) throw GraphError("backward: requested variable from a different graph");
    if (!v.requires_grad()) {
      const std::string label = v.node().name.empty() ? "node " + std::to_string(v.id()) : "'" + v.node().name + "'";
      throw GraphError("backward: gradient requested for " + label + " which does not require grad");
    }
  }

  // Any severed node upstream of the loss hides part of the history; refuse
  // if a requested variable sits in the hidden part.
  std::vector<char> anc(loss.id() + 1, 0);
  anc[loss.id()] = 1;
  for (NodeId n = loss.id() + 1; n-- > 0;) {
    if (!anc[n]) continue;
    const Node& node = g.node(n);
    if (node.cut_leaves) {
      for (const Var& v : wrt) {
        if (std::binary_search(node.cut_leaves->begin(), node.cut_leaves->end(), v.id())) {
          throw GraphError("backward: the path from the loss to '" + v.node().name +
                           "' was truncated by an SGD update; differentiating through unrolled updates "
                           "needs RetainPolicy::keep_history");
        }
      }
    }
    for (NodeId i : node.inputs) anc[i] = 1;
  }
}

// Reverse sweep from `loss`. Returns the adjoint node of each target (kNone
// when the loss does not depend on it).
std::vector<NodeId> run_backward(Graph& g, NodeId loss, const std::vector<NodeId>& targets) {
  std::vector<NodeId> result(targets.size(), kNone);
  if (targets.empty()) return result;
  const NodeId lo = *std::min_element(targets.begin(), targets.end());
  if (lo > loss) return result;

  // reaches[n - lo]: n depends on some target through differentiable nodes.
  std::vector<char> reaches(loss - lo + 1, 0);
  for (NodeId t : targets) {
    if (t <= loss) reaches[t - lo] = 1;
  }
  for (NodeId n = lo; n <= loss; ++n) {
    if (reaches[n - lo]) continue;
    const Node& node = g.node(n);
    if (!node.requires_grad) continue;
    for (NodeId i : node.inputs) {
      if (i >= lo && reaches[i - lo]) {
        reaches[n - lo] = 1;
        break;
      }
    }
  }
  if (!reaches[loss - lo]) return result;

  std::vector<NodeId> adj(loss - lo + 1, kNone);
  adj[loss - lo] = g.constant(Tensor::scalar(1.0)).id();

  std::vector<std::pair<std::size_t, Var>> contribs;
  std::vector<char> need;
  for (NodeId n = loss + 1; n-- > lo;) {
    if (adj[n - lo] == kNone) continue;
    const Node& node = g.node(n);
    need.assign(node.inputs.size(), 0);
    bool any = false;
    for (std::size_t s = 0; s < node.inputs.size(); ++s) {
      const NodeId i = node.inputs[s];
      need[s] = i >= lo && reaches[i - lo];
      any = any || need[s];
    }
    if (!any) continue;

    contribs.clear();
    detail::adjoint_rule(g, n, g.var(adj[n - lo]), need, contribs);

    auto& c = corruption();
    std::unique_lock lock(c.mu);
    const bool corrupt = c.active && c.kind == node.kind;
    const double factor = c.factor;
    lock.unlock();

    for (auto& [slot, v] : contribs) {
      if (!need[slot]) continue;
      Var contrib = corrupt ? scale(v, factor) : v;
      const NodeId i = node.inputs[slot];
      NodeId& a = adj[i - lo];
      a = a == kNone ? contrib.id() : add(g.var(a), contrib).id();
    }
  }

  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] <= loss) result[t] = adj[targets[t] - lo];
  }
  return result;
}

std::vector<NodeId> ids_of(std::span<const Var> wrt) {
  std::vector<NodeId> ids;
  ids.reserve(wrt.size());
  for (const Var& v : wrt) ids.push_back(v.id());
  return ids;
}

}  // namespace

GradientMap backward(const Var& loss, std::span<const Var> wrt) {
  validate_request(loss, wrt);
  Graph& g = loss.graph();
  const auto targets = ids_of(wrt);
  GradientMap out;
  NumericScope scope(g);
  const auto adj = run_backward(g, loss.id(), targets);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    bool dup = false;
    for (std::size_t u = 0; u < t; ++u) dup = dup || targets[u] == targets[t];
    if (dup) continue;
    const Node& node = g.node(targets[t]);
    Tensor grad = adj[t] == kNone ? Tensor(node.value.shape()) : g.node(adj[t]).value;
    out.insert({targets[t], node.name, std::move(grad)});
  }
  return out;
}

std::vector<Var> grad(const Var& loss, std::span<const Var> wrt) {
  validate_request(loss, wrt);
  Graph& g = loss.graph();
  const auto adj = run_backward(g, loss.id(), ids_of(wrt));
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    out.push_back(adj[t] == kNone ? g.constant(Tensor(wrt[t].shape())) : g.var(adj[t]));
  }
  return out;
}

const Tensor& GradientMap::at(NodeId id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return e.grad;
  }
  throw GraphError("no gradient recorded for node " + std::to_string(id));
}

std::vector<std::pair<std::string, double>> grad_magnitude_report(const GradientMap& grads) {
  std::vector<std::pair<std::string, double>> report;
  for (const auto& e : grads) {
    double ss = 0.0;
    for (double v : e.grad.data()) ss += v * v;
    report.emplace_back(e.name.empty() ? "node" + std::to_string(e.id) : e.name, std::sqrt(ss));
  }
  std::stable_sort(report.begin(), report.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return report;
}

namespace testing {

void corrupt_adjoint(OpKind kind, double factor) {
  auto& c = corruption();
  std::lock_guard lock(c.mu);
  c.active = true;
  c.kind = kind;
  c.factor = factor;
}

void clear_adjoint_corruption() {
  auto& c = corruption();
  std::lock_guard lock(c.mu);
  c.active = false;
}

}  // namespace testing

}  // namespace prospr::ad

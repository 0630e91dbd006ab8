#pragma once

// Tape-based reverse-mode differentiation.
//
// A Graph records every op as a Node holding its computed value. Adjoint
// rules are written in terms of the same recorded ops, so `grad()` can return
// gradients that are themselves differentiable. That is what makes the
// meta-gradient through M unrolled SGD updates exact: the updates
// w_{i+1} = w_i - lr * grad_i stay in the graph and a final `backward()`
// walks through all of them, including the Hessian terms hidden in grad_i.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prospr/tensor.hpp"

namespace prospr::ad {

using NodeId = std::size_t;

enum class OpKind : std::uint8_t {
  leaf,
  constant,
  severed,  // leaf whose producing history was dropped
  add,
  sub,
  mul,
  scale,
  matmul,
  conv2d,
  conv2d_input_grad,
  conv2d_weight_grad,
  avg_pool2d,
  avg_pool2d_grad,
  relu,
  relu_mask,
  reshape,
  broadcast_axis,
  reduce_axis,
  expand_scalar,
  sum_all,
  softmax,
  softmax_cross_entropy,
};

std::string_view op_name(OpKind kind);

/// Whether values produced by SGD updates keep their link to earlier steps.
enum class RetainPolicy {
  keep_history,  // required for meta-gradients through updates
  truncate,      // sgd_update() returns a fresh leaf; memory stays bounded
};

struct OpAttrs {
  double scalar = 0.0;
  bool trans_a = false;
  bool trans_b = false;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t axis = 0;
  std::size_t window = 1;
  Shape shape;
  std::shared_ptr<const std::vector<int>> labels;
};

struct Node {
  OpKind kind = OpKind::leaf;
  std::vector<NodeId> inputs;
  OpAttrs attrs;
  Tensor value;
  bool requires_grad = false;
  std::string name;
  // severed nodes only: the differentiable leaves their dropped history reached.
  std::shared_ptr<const std::vector<NodeId>> cut_leaves;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the Graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Node& node() const;
  const Tensor& value() const { return node().value; }
  const Shape& shape() const { return node().value.shape(); }
  bool requires_grad() const { return node().requires_grad; }

 private:
  friend class Graph;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

class Graph {
 public:
  explicit Graph(RetainPolicy policy = RetainPolicy::keep_history) : policy_(policy) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = true, std::string name = {});
  Var constant(Tensor value, std::string name = {});

  /// Returns w - lr * grad. Under RetainPolicy::truncate the result is a new
  /// leaf with no recorded history.
  Var sgd_update(const Var& w, const Var& grad, double lr, bool requires_grad = true);

  /// Copies x into a leaf that forgets how x was computed.
  Var detach(const Var& x, bool requires_grad);

  RetainPolicy retain_policy() const noexcept { return policy_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  Var var(NodeId id);

  /// Appends an op record. Used by the op functions; validates finiteness.
  Var record(OpKind kind, std::vector<NodeId> inputs, OpAttrs attrs, Tensor value);

 private:
  friend struct GraphAccess;

  void truncate(std::size_t n);
  std::shared_ptr<const std::vector<NodeId>> reachable_leaves(std::span<const NodeId> roots) const;

  std::deque<Node> nodes_;
  RetainPolicy policy_;
  bool grad_enabled_ = true;
};

// ---- ops -----------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

/// op(a) * op(b) for 2-D operands, op = transpose when the flag is set.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

/// x [B,Cin,H,W], w [Cout,Cin,KH,KW] -> [B,Cout,Ho,Wo]; zero padding.
Var conv2d(const Var& x, const Var& w, std::size_t stride = 1, std::size_t pad = 0);
/// Gradient of conv2d w.r.t. its input, given the output gradient.
Var conv2d_input_grad(const Var& gy, const Var& w, const Shape& x_shape, std::size_t stride, std::size_t pad);
/// Gradient of conv2d w.r.t. its kernel, given the output gradient.
Var conv2d_weight_grad(const Var& x, const Var& gy, const Shape& w_shape, std::size_t stride, std::size_t pad);

/// Non-overlapping average pooling over window x window blocks of [B,C,H,W].
Var avg_pool2d(const Var& x, std::size_t window);
Var avg_pool2d_grad(const Var& gy, std::size_t window, const Shape& x_shape);

Var relu(const Var& x);
/// g where x > 0, else 0.
Var relu_mask(const Var& g, const Var& x);

Var reshape(const Var& x, Shape shape);
/// out[idx] = v[idx[axis]] for v of length shape[axis].
Var broadcast_axis(const Var& v, Shape shape, std::size_t axis);
/// out[k] = sum of x over all indices whose axis coordinate is k.
Var reduce_axis(const Var& x, std::size_t axis);
Var expand_scalar(const Var& s, Shape shape);
Var sum_all(const Var& x);

/// Row-wise softmax of a [B,K] tensor.
Var softmax(const Var& logits);
/// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(const Var& logits, std::shared_ptr<const std::vector<int>> labels);

// ---- differentiation -----------------------------------------------------

class GradientMap {
 public:
  struct Entry {
    NodeId id;
    std::string name;
    Tensor grad;
  };

  const Tensor& at(NodeId id) const;
  const Tensor& at(const Var& v) const { return at(v.id()); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void insert(Entry e) { entries_.push_back(std::move(e)); }

 private:
  std::vector<Entry> entries_;
};

/// Gradient of a scalar loss w.r.t. each node in `wrt`. The graph is left
/// exactly as it was. Nodes the loss does not depend on get zero gradients.
GradientMap backward(const Var& loss, std::span<const Var> wrt);

/// Same gradients, recorded as new graph nodes so they can be differentiated
/// again.
std::vector<Var> grad(const Var& loss, std::span<const Var> wrt);

/// L2 norm of each gradient, sorted by node name.
std::vector<std::pair<std::string, double>> grad_magnitude_report(const GradientMap& grads);

/// While alive, folds the on/off pattern of every ReLU evaluated on this
/// thread into a fingerprint. Equal fingerprints mean two evaluations of a
/// network stayed on the same smooth piece; finite-difference checks use it
/// to notice when a perturbation crosses a kink.
class ActivationFingerprint {
 public:
  ActivationFingerprint();
  ~ActivationFingerprint();
  ActivationFingerprint(const ActivationFingerprint&) = delete;
  ActivationFingerprint& operator=(const ActivationFingerprint&) = delete;

  std::uint64_t value() const noexcept { return hash_; }

  /// Innermost live fingerprint of this thread, or null.
  static ActivationFingerprint* active() noexcept;
  void fold(std::span<const double> pre_activation) noexcept;

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  ActivationFingerprint* previous_;
};

namespace testing {
/// Multiplies every adjoint contribution of `kind` by `factor`. Lets tests
/// confirm that gradient checks actually catch a wrong adjoint rule.
void corrupt_adjoint(OpKind kind, double factor);
void clear_adjoint_corruption();
}  // namespace testing

}  // namespace prospr::ad

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "prospr/autodiff.hpp"

namespace prospr::ad::detail {

/// Contributions of node `id` to the adjoints of its inputs, given the
/// node's own adjoint `g`. Only input slots with `need[slot]` set are
/// produced. Every contribution is built from recorded ops.
void adjoint_rule(Graph& graph, NodeId id, const Var& g, std::span<const char> need,
                  std::vector<std::pair<std::size_t, Var>>& out);

}  // namespace prospr::ad::detail

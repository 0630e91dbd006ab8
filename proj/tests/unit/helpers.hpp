#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "prospr/autodiff.hpp"
#include "prospr/random.hpp"
#include "prospr/tensor.hpp"

namespace testutil {

using prospr::Shape;
using prospr::Tensor;
namespace ad = prospr::ad;

inline Tensor random_tensor(const Shape& shape, prospr::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values in [-hi,-lo] u [lo,hi], keeping finite differences away from ReLU kinks.
inline Tensor random_away_from_zero(const Shape& shape, prospr::Rng& rng, double lo = 0.1, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return t;
}

using Builder = std::function<ad::Var(std::span<const ad::Var>)>;

// Reduces f's output to a scalar with a fixed pseudo-random weighting, so every
// output element contributes with a distinct coefficient.
inline ad::Var probe(const ad::Var& out, std::uint64_t seed) {
  prospr::Rng rng(seed);
  const Tensor r = random_tensor(out.shape(), rng, 0.5, 1.5);
  return ad::sum_all(ad::mul(out, out.graph().constant(r)));
}

inline double probe_value(const Builder& f, const std::vector<Tensor>& inputs, std::uint64_t seed) {
  ad::Graph g;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
  return probe(f(leaves), seed).value().item();
}

// Max |analytic - numeric| over all input elements divided by the largest
// analytic magnitude. Central differences with h scaled by |x|.
inline double fd_check(const Builder& f, const std::vector<Tensor>& inputs, std::uint64_t seed = 1) {
  std::vector<Tensor> analytic;
  {
    ad::Graph g;
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
    const auto grads = ad::backward(probe(f(leaves), seed), leaves);
    for (const auto& l : leaves) analytic.push_back(grads.at(l));
  }
  double max_err = 0.0, max_grad = 0.0;
  std::vector<Tensor> x = inputs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      const double x0 = x[i][k];
      const double h = 1e-5 * std::max(1.0, std::abs(x0));
      x[i][k] = x0 + h;
      const double up = probe_value(f, x, seed);
      x[i][k] = x0 - h;
      const double down = probe_value(f, x, seed);
      x[i][k] = x0;
      const double numeric = (up - down) / (2.0 * h);
      max_err = std::max(max_err, std::abs(numeric - analytic[i][k]));
      max_grad = std::max(max_grad, std::abs(analytic[i][k]));
    }
  }
  return max_grad == 0.0 ? max_err : max_err / max_grad;
}

// Builder whose output is a weighted sum of f's recorded gradients, so that
// fd_check on it verifies the adjoint rules of the adjoint ops.
inline Builder second_order(Builder f, std::uint64_t seed = 2) {
  return [f = std::move(f), seed](std::span<const ad::Var> leaves) {
    const auto grads = ad::grad(probe(f(leaves), seed), leaves);
    ad::Var total = probe(grads[0], seed + 1);
    for (std::size_t i = 1; i < grads.size(); ++i) total = ad::add(total, probe(grads[i], seed + 1 + i));
    return total;
  };
}

}  // namespace testutil

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("prospr-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

}  // namespace testutil

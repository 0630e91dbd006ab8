#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prospr/tensor.hpp"

namespace prospr {

enum class Granularity {
  per_weight,   // one entry per weight
  per_channel,  // one entry per conv output channel / linear output unit
};

std::string to_string(Granularity g);
Granularity parse_granularity(const std::string& name);

/// Mask layout for one prunable parameter. Entries cover the parameter's
/// leading axis in `groups` blocks of `group_size` weights each.
struct MaskGroup {
  std::string param;
  std::size_t param_index = 0;  // position in ModelState::params
  Shape param_shape;
  std::size_t entries = 0;
  std::size_t group_size = 1;

  friend bool operator==(const MaskGroup&, const MaskGroup&) = default;
};

struct MaskSpec {
  Granularity granularity = Granularity::per_weight;
  std::vector<MaskGroup> groups;

  /// Total number of mask entries m.
  std::size_t total_entries() const;
  /// Offset of each group's first entry in the flat entry vector.
  std::vector<std::size_t> offsets() const;
  /// Shape of the mask tensor for group i.
  Shape entry_shape(std::size_t i) const;

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

/// Binary retention pattern over a MaskSpec, flat in parameter order.
struct Mask {
  MaskSpec spec;
  std::vector<std::uint8_t> keep;

  static Mask ones(MaskSpec spec);

  std::size_t retained() const;
  double density() const;
  /// Expands group i to a 0/1 tensor shaped like its parameter.
  Tensor expand(std::size_t i) const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// "PRPRMASK" file: header, spec descriptor, one byte per entry.
void save_mask(const std::filesystem::path& path, const Mask& mask);
Mask load_mask(const std::filesystem::path& path);

}  // namespace prospr

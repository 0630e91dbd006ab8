#include "prospr/mask.hpp"

#include <algorithm>

#include "binary_io.hpp"
#include "prospr/error.hpp"

namespace prospr {

namespace {
constexpr std::string_view kMaskMagic = "PRPRMASK";
constexpr std::uint32_t kMaskVersion = 1;
}  // namespace

std::string to_string(Granularity g) { return g == Granularity::per_weight ? "unstructured" : "structured"; }

Granularity parse_granularity(const std::string& name) {
  if (name == "unstructured" || name == "per-weight") return Granularity::per_weight;
  if (name == "structured" || name == "per-channel") return Granularity::per_channel;
  throw ConfigError("unknown granularity '" + name + "' (unstructured|structured)");
}

std::size_t MaskSpec::total_entries() const {
  std::size_t m = 0;
  for (const auto& g : groups) m += g.entries;
  return m;
}

std::vector<std::size_t> MaskSpec::offsets() const {
  std::vector<std::size_t> off;
  std::size_t at = 0;
  for (const auto& g : groups) {
    off.push_back(at);
    at += g.entries;
  }
  return off;
}

Shape MaskSpec::entry_shape(std::size_t i) const {
  const auto& g = groups.at(i);
  return granularity == Granularity::per_weight ? g.param_shape : Shape{g.entries};
}

Mask Mask::ones(MaskSpec spec) {
  Mask m;
  m.keep.assign(spec.total_entries(), 1);
  m.spec = std::move(spec);
  return m;
}

std::size_t Mask::retained() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

double Mask::density() const {
  return keep.empty() ? 0.0 : static_cast<double>(retained()) / static_cast<double>(keep.size());
}

Tensor Mask::expand(std::size_t i) const {
  const auto& g = spec.groups.at(i);
  const std::size_t off = spec.offsets()[i];
  Tensor t(g.param_shape);
  auto d = t.data();
  for (std::size_t e = 0; e < g.entries; ++e) {
    std::fill_n(d.begin() + static_cast<std::ptrdiff_t>(e * g.group_size), g.group_size,
                static_cast<double>(keep[off + e]));
  }
  return t;
}

void save_mask(const std::filesystem::path& path, const Mask& mask) {
  if (mask.keep.size() != mask.spec.total_entries()) throw Error("mask entry count does not match its spec");
  io::Writer w;
  w.bytes(kMaskMagic);
  w.u32_le(kMaskVersion);
  w.u8(mask.spec.granularity == Granularity::per_weight ? 0 : 1);
  w.u32_le(static_cast<std::uint32_t>(mask.spec.groups.size()));
  for (const auto& g : mask.spec.groups) {
    w.u32_le(static_cast<std::uint32_t>(g.param.size()));
    w.bytes(g.param);
    w.u32_le(static_cast<std::uint32_t>(g.param_index));
    w.u32_le(static_cast<std::uint32_t>(g.param_shape.size()));
    for (auto d : g.param_shape) w.u64_le(d);
    w.u64_le(g.entries);
    w.u64_le(g.group_size);
  }
  w.u64_le(mask.keep.size());
  for (auto b : mask.keep) w.u8(b);
  io::write_file(path, w.buffer());
}

Mask load_mask(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes, "mask file '" + path.string() + "'");
  if (r.str(kMaskMagic.size(), "magic") != kMaskMagic) r.fail("bad magic, expected PRPRMASK", 0);
  const auto version_at = r.offset();
  if (r.u32_le("version") != kMaskVersion) r.fail("unsupported format version", version_at);
  Mask mask;
  const auto gran_at = r.offset();
  const auto gran = r.u8("granularity");
  if (gran > 1) r.fail("unknown granularity tag", gran_at);
  mask.spec.granularity = gran == 0 ? Granularity::per_weight : Granularity::per_channel;
  const auto count = r.u32_le("group count");
  for (std::uint32_t i = 0; i < count; ++i) {
    MaskGroup g;
    const auto len = r.u32_le("name length");
    g.param = r.str(len, "name");
    g.param_index = r.u32_le("parameter index");
    const auto rank_at = r.offset();
    const auto rank = r.u32_le("rank");
    if (rank == 0 || rank > 8) r.fail("implausible rank " + std::to_string(rank), rank_at);
    for (std::uint32_t k = 0; k < rank; ++k) g.param_shape.push_back(r.u64_le("extent"));
    const auto entries_at = r.offset();
    g.entries = r.u64_le("entry count");
    g.group_size = r.u64_le("group size");
    if (g.entries * g.group_size != shape_numel(g.param_shape)) {
      r.fail("group layout does not cover parameter '" + g.param + "'", entries_at);
    }
    mask.spec.groups.push_back(std::move(g));
  }
  const auto total_at = r.offset();
  const auto total = r.u64_le("entry total");
  if (total != mask.spec.total_entries()) r.fail("entry total disagrees with the group table", total_at);
  const auto* p = r.take(total, "mask entries");
  mask.keep.assign(p, p + total);
  for (std::size_t i = 0; i < total; ++i) {
    if (mask.keep[i] > 1) r.fail("mask entry is neither 0 nor 1", total_at + 8 + i);
  }
  if (!r.at_end()) r.fail("trailing bytes after mask entries", r.offset());
  return mask;
}

}  // namespace prospr

#include <map>
#include <set>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "prospr/data.hpp"
#include "prospr/error.hpp"

using namespace prospr;
using testutil::put_u32_be;
using testutil::TempDir;
using testutil::write_bytes;

namespace {

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                      const std::vector<unsigned char>& pixels) {
  std::vector<unsigned char> out;
  put_u32_be(out, 0x00000803);
  put_u32_be(out, n);
  put_u32_be(out, rows);
  put_u32_be(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> out;
  put_u32_be(out, 0x00000801);
  put_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<unsigned char> cifar_record(unsigned char label, unsigned char r, unsigned char g, unsigned char b) {
  std::vector<unsigned char> rec{label};
  rec.insert(rec.end(), 1024, r);
  rec.insert(rec.end(), 1024, g);
  rec.insert(rec.end(), 1024, b);
  return rec;
}

template <class F>
std::uint64_t format_error_offset(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected FormatError");
  return 0;
}

std::map<int, std::size_t> label_counts(const data::Batch& b) {
  std::map<int, std::size_t> counts;
  for (int l : *b.labels) ++counts[l];
  return counts;
}

}  // namespace

TEST_CASE("IDX fixture round-trips") {
  TempDir dir("idx");
  write_bytes(dir / "img", idx_images(2, 2, 2, {0, 255, 51, 102, 1, 2, 3, 4}));
  write_bytes(dir / "lab", idx_labels({3, 1}));
  const auto ds = data::load_idx(dir / "img", dir / "lab", data::Split::train);
  CHECK(ds.size() == 2);
  CHECK(ds.inputs.shape() == Shape{2, 1, 2, 2});
  CHECK(ds.inputs[0] == 0.0);
  CHECK(ds.inputs[1] == 1.0);
  CHECK(ds.inputs[2] == 51.0 / 255.0);
  CHECK(ds.labels == std::vector<int>{3, 1});
  CHECK(ds.num_categories == 4);
  for (double v : ds.inputs.data()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("malformed IDX files are rejected with byte offsets") {
  TempDir dir("idxbad");
  write_bytes(dir / "lab", idx_labels({0, 1}));
  auto good = idx_images(2, 2, 2, {1, 2, 3, 4, 5, 6, 7, 8});

  SUBCASE("truncated pixels") {
    auto bytes = good;
    bytes.resize(20);
    write_bytes(dir / "img", bytes);
    CHECK(format_error_offset([&] { data::load_idx(dir / "img", dir / "lab", data::Split::train); }) == 16);
  }
  SUBCASE("truncated header") {
    auto bytes = good;
    bytes.resize(10);
    write_bytes(dir / "img", bytes);
    CHECK(format_error_offset([&] { data::load_idx(dir / "img", dir / "lab", data::Split::train); }) == 8);
  }
  SUBCASE("bad magic") {
    auto bytes = good;
    bytes[3] = 0x01;
    write_bytes(dir / "img", bytes);
    CHECK(format_error_offset([&] { data::load_idx(dir / "img", dir / "lab", data::Split::train); }) == 0);
  }
  SUBCASE("label count mismatch") {
    write_bytes(dir / "img", good);
    write_bytes(dir / "lab3", idx_labels({0, 1, 2}));
    CHECK(format_error_offset([&] { data::load_idx(dir / "img", dir / "lab3", data::Split::train); }) == 4);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(data::load_idx(dir / "nope", dir / "lab", data::Split::train), Error);
  }
}

TEST_CASE("CIFAR-10 binary fixture") {
  TempDir dir("cifar");
  auto bytes = cifar_record(7, 255, 0, 51);
  write_bytes(dir / "one.bin", bytes);
  const auto ds = data::load_cifar10_binary(dir / "one.bin", data::Split::test);
  CHECK(ds.labels == std::vector<int>{7});
  CHECK(ds.inputs.shape() == Shape{1, 3, 32, 32});
  CHECK(ds.inputs[0] == 1.0);
  CHECK(ds.inputs[1024] == 0.0);
  CHECK(ds.inputs[2048] == 0.2);

  const auto two = cifar_record(1, 0, 0, 0);
  bytes.insert(bytes.end(), two.begin(), two.end());
  write_bytes(dir / "two.bin", bytes);
  CHECK(data::load_cifar10_binary(dir / "two.bin", data::Split::test).size() == 2);

  bytes.resize(3073 + 100);
  write_bytes(dir / "short.bin", bytes);
  CHECK(format_error_offset([&] { data::load_cifar10_binary(dir / "short.bin", data::Split::test); }) == 3073);

  auto bad_label = cifar_record(12, 0, 0, 0);
  write_bytes(dir / "label.bin", bad_label);
  CHECK(format_error_offset([&] { data::load_cifar10_binary(dir / "label.bin", data::Split::test); }) == 0);
}

TEST_CASE("bundled MNIST subset loads") {
  const std::filesystem::path dir = std::filesystem::path(PROSPR_TEST_DATA_DIR) / "mnist-5k";
  const auto train = data::load_mnist(dir, data::Split::train);
  const auto test = data::load_mnist(dir, data::Split::test);
  CHECK(train.size() == 4000);
  CHECK(test.size() == 1000);
  CHECK(train.inputs.shape() == Shape{4000, 1, 28, 28});
  CHECK(train.num_categories == 10);
}

TEST_CASE("synthetic clusters") {
  data::SyntheticConfig cfg;
  cfg.num_categories = 2;
  cfg.per_category = 5;
  cfg.dim = 3;
  const auto ds = data::make_synthetic(cfg);
  CHECK(ds.size() == 10);
  CHECK(ds.inputs.shape() == Shape{10, 3});
  std::map<int, int> counts;
  for (int l : ds.labels) ++counts[l];
  CHECK(counts[0] == 5);
  CHECK(counts[1] == 5);
  CHECK(data::make_synthetic(cfg).inputs == ds.inputs);
  CHECK(data::make_synthetic(cfg, data::Split::test).inputs != ds.inputs);
}

TEST_CASE("class-balanced batches") {
  data::SyntheticConfig cfg;
  cfg.per_category = 30;
  const auto ds = data::make_synthetic(cfg);

  data::Sampler s(ds, {20, data::SamplerMode::class_balanced, 1});
  for (int i = 0; i < 5; ++i) {
    const auto counts = label_counts(s.next());
    CHECK(counts.size() == 10);
    for (const auto& [label, n] : counts) CHECK(n == 2);
  }

  for (std::size_t b = 10; b <= 57; b += 7) {
    data::Sampler sb(ds, {b, data::SamplerMode::class_balanced, b});
    for (int i = 0; i < 3; ++i) {
      const auto batch = sb.next();
      CHECK(batch.size() == b);
      std::size_t lo = b, hi = 0;
      for (int c = 0; c < 10; ++c) {
        const auto counts = label_counts(batch);
        const std::size_t n = counts.count(c) ? counts.at(c) : 0;
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      CHECK(hi - lo <= 1);
    }
  }
  CHECK_THROWS_AS(data::Sampler(ds, {5, data::SamplerMode::class_balanced, 0}), ConfigError);
}

TEST_CASE("class-balanced sampling names a missing category") {
  data::Dataset ds;
  ds.inputs = Tensor({4, 1}, {0, 1, 2, 3});
  ds.labels = {0, 0, 2, 2};
  ds.num_categories = 3;
  try {
    data::Sampler s(ds, {3, data::SamplerMode::class_balanced, 0});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("category 1") != std::string::npos);
  }
}

TEST_CASE("fixed single batch repeats and samplers are deterministic") {
  const auto ds = data::make_synthetic({});
  data::Sampler fixed(ds, {32, data::SamplerMode::fixed_single_batch, 4});
  const auto first = fixed.next();
  for (int i = 0; i < 3; ++i) {
    const auto b = fixed.next();
    CHECK(b.inputs == first.inputs);
    CHECK(*b.labels == *first.labels);
  }
  CHECK(fixed.batches_drawn() == 4);

  for (auto mode : {data::SamplerMode::shuffled, data::SamplerMode::class_balanced}) {
    data::Sampler a(ds, {64, mode, 9}), b(ds, {64, mode, 9}), c(ds, {64, mode, 10});
    bool differs = false;
    for (int i = 0; i < 40; ++i) {
      const auto ba = a.next();
      const auto bb = b.next();
      CHECK(ba.inputs == bb.inputs);
      differs = differs || !(ba.inputs == c.next().inputs);
    }
    CHECK(differs);
  }
}

TEST_CASE("shuffled batches cover the dataset once per pass") {
  data::SyntheticConfig cfg;
  cfg.per_category = 10;
  const auto ds = data::make_synthetic(cfg);
  data::Sampler s(ds, {25, data::SamplerMode::shuffled, 2});
  std::multiset<double> seen;
  for (int i = 0; i < 4; ++i) {
    const auto b = s.next();
    for (std::size_t r = 0; r < b.size(); ++r) seen.insert(b.inputs[r * cfg.dim]);
  }
  std::multiset<double> all;
  for (std::size_t r = 0; r < ds.size(); ++r) all.insert(ds.inputs[r * cfg.dim]);
  CHECK(seen == all);
}

TEST_CASE("batch size is clamped to the dataset") {
  data::SyntheticConfig cfg;
  cfg.per_category = 3;
  const auto ds = data::make_synthetic(cfg);
  data::Sampler s(ds, {512, data::SamplerMode::shuffled, 0});
  CHECK(s.batch_size() == 30);
  CHECK(s.next().size() == 30);
}

TEST_CASE("sampler mode names") {
  for (auto m : {data::SamplerMode::shuffled, data::SamplerMode::class_balanced, data::SamplerMode::fixed_single_batch}) {
    CHECK(data::parse_sampler_mode(data::to_string(m)) == m);
  }
  CHECK_THROWS_AS(data::parse_sampler_mode("sideways"), ConfigError);
}

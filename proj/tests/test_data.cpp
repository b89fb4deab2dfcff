#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "nestseg/dataset.hpp"
#include "nestseg/pgm.hpp"
#include "nestseg/rng.hpp"
#include "nestseg/synthetic.hpp"
#include "nestseg/util.hpp"

#include "test_support.hpp"

using namespace nestseg;

namespace {

SyntheticConfig tiny_config(std::uint64_t seed, int count, int size = 32) {
  SyntheticConfig c;
  c.seed = seed;
  c.count = count;
  c.image_size = size;
  return c;
}

}  // namespace

TEST_CASE("pgm: bytes survive the write/read round trip") {
  const std::string dir = testing::scratch_dir("pgm_roundtrip");
  Rng rng(31);
  std::vector<std::uint8_t> pixels(7 * 5);
  for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  write_pgm(dir + "/t.pgm", pixels, 7, 5);
  int w = 0, h = 0;
  CHECK(read_pgm(dir + "/t.pgm", &w, &h) == pixels);
  CHECK(w == 7);
  CHECK(h == 5);
}

TEST_CASE("pgm: reader accepts comments and flexible whitespace in the header") {
  const std::string dir = testing::scratch_dir("pgm_header");
  const std::string raw = std::string("P5 # format\n# a comment line\n 3\n2 # width height\n255\n") +
                          std::string("\x01\x02\x03\x04\x05\x06", 6);
  write_text_file(dir + "/c.pgm", raw);
  int w = 0, h = 0;
  const auto px = read_pgm(dir + "/c.pgm", &w, &h);
  CHECK(w == 3);
  CHECK(h == 2);
  CHECK(px == std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("pgm: malformed files are rejected") {
  const std::string dir = testing::scratch_dir("pgm_bad");
  int w = 0, h = 0;
  write_text_file(dir + "/magic.pgm", "P6\n2 2\n255\n....");
  CHECK_THROWS_AS(read_pgm(dir + "/magic.pgm", &w, &h), Error);
  write_text_file(dir + "/short.pgm", "P5\n4 4\n255\nab");
  CHECK_THROWS_AS(read_pgm(dir + "/short.pgm", &w, &h), Error);
  write_text_file(dir + "/deep.pgm", "P5\n2 2\n65535\naaaaaaaa");
  CHECK_THROWS_AS(read_pgm(dir + "/deep.pgm", &w, &h), Error);
  CHECK_THROWS_AS(read_pgm(dir + "/absent.pgm", &w, &h), Error);
  CHECK_THROWS_AS(write_pgm(dir + "/sz.pgm", {1, 2, 3}, 2, 2), Error);
}

TEST_CASE("ellipse rasterization: a circle's mask area tracks pi*r^2") {
  std::vector<double> image(64 * 64, 0.0);
  std::vector<std::uint8_t> mask(64 * 64, 0);
  add_ellipse(image, mask, 64, 32.0, 32.0, 10.0, 10.0, 0.0, 0.8);
  int area = 0;
  for (std::uint8_t m : mask) area += m == 255 ? 1 : 0;
  const double expected = M_PI * 10.0 * 10.0;
  CHECK(std::abs(area - expected) / expected < 0.02);
  // rotating a circle changes nothing
  std::vector<double> image2(64 * 64, 0.0);
  std::vector<std::uint8_t> mask2(64 * 64, 0);
  add_ellipse(image2, mask2, 64, 32.0, 32.0, 10.0, 10.0, 1.1, 0.8);
  CHECK(mask2 == mask);
}

TEST_CASE("split arithmetic: 70/15/15 with the remainder going to test") {
  int tr = 0, va = 0, te = 0;
  split_counts(200, &tr, &va, &te);
  CHECK(tr == 140);
  CHECK(va == 30);
  CHECK(te == 30);
  split_counts(10, &tr, &va, &te);
  CHECK(tr == 7);
  CHECK(va == 1);
  CHECK(te == 2);
  split_counts(3, &tr, &va, &te);
  CHECK(tr + va + te == 3);
}

TEST_CASE("generation is reproducible: equal seeds give byte-identical files") {
  const std::string d1 = testing::scratch_dir("gen_a");
  const std::string d2 = testing::scratch_dir("gen_b");
  const std::string d3 = testing::scratch_dir("gen_c");
  const DatasetManifest m1 = generate_synthetic(tiny_config(5, 6), d1);
  const DatasetManifest m2 = generate_synthetic(tiny_config(5, 6), d2);
  const DatasetManifest m3 = generate_synthetic(tiny_config(6, 6), d3);
  REQUIRE(m1.entries.size() == 6);
  bool all_same = true, any_diff = false;
  for (std::size_t k = 0; k < m1.entries.size(); ++k) {
    const auto& e = m1.entries[k];
    all_same = all_same && testing::read_bytes(d1 + "/" + e.image_path) ==
                               testing::read_bytes(d2 + "/" + m2.entries[k].image_path);
    all_same = all_same && testing::read_bytes(d1 + "/" + e.mask_path) ==
                               testing::read_bytes(d2 + "/" + m2.entries[k].mask_path);
    any_diff = any_diff || testing::read_bytes(d1 + "/" + e.image_path) !=
                               testing::read_bytes(d3 + "/" + m3.entries[k].image_path);
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("generated masks are strictly binary with foreground inside the accepted band") {
  const std::string dir = testing::scratch_dir("gen_band");
  const SyntheticConfig config = tiny_config(9, 8);
  generate_synthetic(config, dir);
  for (int k = 0; k < 8; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d", k);
    int w = 0, h = 0;
    const auto mask = read_pgm(dir + "/masks/" + name + ".pgm", &w, &h);
    int fg = 0;
    for (std::uint8_t m : mask) {
      CHECK((m == 0 || m == 255));
      fg += m == 255 ? 1 : 0;
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(w * h);
    CHECK(frac >= config.min_foreground);
    CHECK(frac <= config.max_foreground);
  }
}

TEST_CASE("sizes are padded up to a multiple of 16 so the deep pyramids divide evenly") {
  const std::string dir = testing::scratch_dir("gen_pad");
  generate_synthetic(tiny_config(3, 2, 20), dir);
  int w = 0, h = 0;
  read_pgm(dir + "/images/sample_0000.pgm", &w, &h);
  CHECK(w == 32);
  CHECK(h == 32);
}

TEST_CASE("manifest round trip preserves every field") {
  const std::string dir = testing::scratch_dir("manifest_rt");
  const DatasetManifest m = generate_synthetic(tiny_config(4, 7), dir);
  save_manifest(m, dir + "/manifest.tsv");
  const DatasetManifest back = load_manifest(dir + "/manifest.tsv");
  REQUIRE(back.entries.size() == m.entries.size());
  for (std::size_t k = 0; k < m.entries.size(); ++k) {
    CHECK(back.entries[k].id == m.entries[k].id);
    CHECK(back.entries[k].image_path == m.entries[k].image_path);
    CHECK(back.entries[k].mask_path == m.entries[k].mask_path);
    CHECK(back.entries[k].split == m.entries[k].split);
  }
  CHECK(back.root == m.root);
}

TEST_CASE("manifest loading rejects duplicates, bad splits, and missing files") {
  const std::string dir = testing::scratch_dir("manifest_bad");
  write_text_file(dir + "/dup.tsv",
                  "# nestseg-manifest v1\na\ti.pgm\tm.pgm\ttrain\na\ti.pgm\tm.pgm\tval\n");
  CHECK_THROWS_AS(load_manifest(dir + "/dup.tsv"), Error);
  write_text_file(dir + "/split.tsv", "# nestseg-manifest v1\na\ti.pgm\tm.pgm\tdev\n");
  CHECK_THROWS_AS(load_manifest(dir + "/split.tsv"), Error);
  write_text_file(dir + "/header.tsv", "a\ti.pgm\tm.pgm\ttrain\n");
  CHECK_THROWS_AS(load_manifest(dir + "/header.tsv"), Error);
  // well-formed manifest text, but the files it names do not exist
  write_text_file(dir + "/ghost.tsv", "# nestseg-manifest v1\na\ti.pgm\tm.pgm\ttrain\n");
  CHECK_THROWS_AS(Dataset::load(load_manifest(dir + "/ghost.tsv")), Error);
}

TEST_CASE("dataset loading scales images to [0,1] and binarizes masks") {
  const std::string dir = testing::scratch_dir("dataset_load");
  const DatasetManifest m = generate_synthetic(tiny_config(12, 10), dir);
  const Dataset data = Dataset::load(m);
  CHECK(data.split(Split::train).size() == 7);
  CHECK(data.split(Split::val).size() == 1);
  CHECK(data.split(Split::test).size() == 2);
  CHECK(data.height() == 32);
  CHECK(data.width() == 32);
  for (const SegmentationSample& s : data.split(Split::train)) {
    CHECK(s.image.shape() == std::vector<std::int64_t>{1, 32, 32});
    for (std::int64_t i = 0; i < s.image.numel(); ++i) {
      CHECK(s.image[i] >= 0.0f);
      CHECK(s.image[i] <= 1.0f);
      CHECK((s.mask[i] == 0.0f || s.mask[i] == 1.0f));
    }
  }
}

TEST_CASE("dataset loading insists on one spatial size, naming the odd file out") {
  const std::string dir = testing::scratch_dir("dataset_mixed");
  std::filesystem::create_directories(dir + "/images");
  std::filesystem::create_directories(dir + "/masks");
  write_pgm(dir + "/images/a.pgm", std::vector<std::uint8_t>(16, 100), 4, 4);
  write_pgm(dir + "/masks/a.pgm", std::vector<std::uint8_t>(16, 255), 4, 4);
  write_pgm(dir + "/images/b.pgm", std::vector<std::uint8_t>(4, 100), 2, 2);
  write_pgm(dir + "/masks/b.pgm", std::vector<std::uint8_t>(4, 255), 2, 2);
  write_text_file(dir + "/manifest.tsv",
                  "# nestseg-manifest v1\n"
                  "a\timages/a.pgm\tmasks/a.pgm\ttrain\n"
                  "b\timages/b.pgm\tmasks/b.pgm\ttrain\n");
  CHECK_THROWS_WITH_AS(Dataset::load(load_manifest(dir + "/manifest.tsv")),
                       doctest::Contains("b.pgm"), Error);
}

TEST_CASE("batching: contiguous, short tail kept, oversize batch collapses to one") {
  const auto batches = batch_indices(7, 3);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0] == std::vector<int>{0, 1, 2});
  CHECK(batches[1] == std::vector<int>{3, 4, 5});
  CHECK(batches[2] == std::vector<int>{6});
  CHECK(batch_indices(2, 100).size() == 1);
  CHECK(batch_indices(2, 100)[0].size() == 2);
  CHECK_THROWS_AS(batch_indices(5, 0), Error);
}

TEST_CASE("stacking samples preserves values in batch order") {
  const std::string dir = testing::scratch_dir("stack");
  const Dataset data = Dataset::load(generate_synthetic(tiny_config(2, 6), dir));
  const auto& train = data.split(Split::train);
  REQUIRE(train.size() >= 3);
  const auto [images, masks] = stack_samples(train, {2, 0});
  CHECK(images.shape() == std::vector<std::int64_t>{2, 1, 32, 32});
  CHECK(masks.shape() == std::vector<std::int64_t>{2, 1, 32, 32});
  for (std::int64_t i = 0; i < 32 * 32; ++i) {
    CHECK(images[i] == train[2].image[i]);
    CHECK(images[32 * 32 + i] == train[0].image[i]);
    CHECK(masks[i] == train[2].mask[i]);
  }
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig c;
  c.count = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SyntheticConfig{};
  c.min_blobs = 3;
  c.max_blobs = 2;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SyntheticConfig{};
  c.min_foreground = 0.5;
  c.max_foreground = 0.4;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SyntheticConfig{};
  c.image_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

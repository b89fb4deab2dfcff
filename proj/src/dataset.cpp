#include "nestseg/dataset.hpp"

#include <filesystem>
#include <set>

#include "nestseg/pgm.hpp"
#include "nestseg/util.hpp"

namespace nestseg {

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  fail("unreachable split");
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  fail("unknown split '" + name + "' (expected train, val, or test)");
}

std::vector<const ManifestEntry*> DatasetManifest::in_split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const ManifestEntry& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::string out = "# nestseg-manifest v1\n";
  for (const ManifestEntry& e : manifest.entries)
    out += e.id + "\t" + e.image_path + "\t" + e.mask_path + "\t" + split_name(e.split) + "\n";
  write_text_file(path, out);
}

DatasetManifest load_manifest(const std::string& path) {
  const std::string text = read_text_file(path);
  const std::vector<std::string> lines = split(text, '\n');
  if (lines.empty() || trim(lines[0]) != "# nestseg-manifest v1")
    fail("manifest " + path + ": missing '# nestseg-manifest v1' header");

  DatasetManifest manifest;
  manifest.root = std::filesystem::path(path).parent_path().string();
  if (manifest.root.empty()) manifest.root = ".";

  std::set<std::string> seen;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (trim(lines[k]).empty()) continue;
    const std::vector<std::string> cols = split(lines[k], '\t');
    if (cols.size() != 4)
      fail("manifest " + path + " line " + std::to_string(k + 1) +
           ": expected id<TAB>image<TAB>mask<TAB>split");
    ManifestEntry e{cols[0], cols[1], cols[2], parse_split(trim(cols[3]))};
    if (!seen.insert(e.id).second)
      fail("manifest " + path + ": duplicate id '" + e.id + "' (splits must be disjoint)");
    for (const std::string& rel : {e.image_path, e.mask_path}) {
      const std::string full = manifest.root + "/" + rel;
      if (!std::filesystem::exists(full)) fail("manifest " + path + ": missing file " + full);
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

namespace {

SegmentationSample load_sample(const std::string& root, const ManifestEntry& e, int* height,
                               int* width) {
  auto read_plane = [&](const std::string& rel, bool binarize) {
    const std::string path = root + "/" + rel;
    int w = 0, h = 0;
    const std::vector<std::uint8_t> pixels = read_pgm(path, &w, &h);
    if (*height == 0) {
      *height = h;
      *width = w;
    } else if (h != *height || w != *width) {
      fail("dataset: " + path + " is " + std::to_string(w) + "x" + std::to_string(h) +
           ", expected " + std::to_string(*width) + "x" + std::to_string(*height));
    }
    Tensor t({1, h, w});
    for (std::size_t k = 0; k < pixels.size(); ++k)
      t[static_cast<std::int64_t>(k)] =
          binarize ? (pixels[k] > 127.5f ? 1.0f : 0.0f) : static_cast<float>(pixels[k]) / 255.0f;
    return t;
  };
  SegmentationSample s;
  s.id = e.id;
  s.image = read_plane(e.image_path, false);
  s.mask = read_plane(e.mask_path, true);
  return s;
}

}  // namespace

Dataset Dataset::load(const DatasetManifest& manifest) {
  Dataset d;
  for (const ManifestEntry& e : manifest.entries) {
    SegmentationSample s = load_sample(manifest.root, e, &d.height_, &d.width_);
    switch (e.split) {
      case Split::train: d.train_.push_back(std::move(s)); break;
      case Split::val: d.val_.push_back(std::move(s)); break;
      case Split::test: d.test_.push_back(std::move(s)); break;
    }
  }
  return d;
}

const std::vector<SegmentationSample>& Dataset::split(Split s) const {
  switch (s) {
    case Split::train: return train_;
    case Split::val: return val_;
    case Split::test: return test_;
  }
  fail("unreachable split");
}

std::vector<std::vector<int>> batch_indices(int count, int batch_size) {
  if (count < 1) fail("batching: empty sample list");
  if (batch_size < 1) fail("batching: batch_size must be at least 1");
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < count; start += batch_size) {
    std::vector<int> batch;
    for (int k = start; k < std::min(count, start + batch_size); ++k) batch.push_back(k);
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::pair<Tensor, Tensor> stack_samples(const std::vector<SegmentationSample>& samples,
                                        const std::vector<int>& indices) {
  if (indices.empty()) fail("stack: empty batch");
  const Tensor& first = samples.at(static_cast<std::size_t>(indices[0])).image;
  const std::int64_t h = first.dim(1), w = first.dim(2);
  const std::int64_t b = static_cast<std::int64_t>(indices.size());
  Tensor images({b, 1, h, w});
  Tensor masks({b, 1, h, w});
  const std::int64_t plane = h * w;
  for (std::int64_t k = 0; k < b; ++k) {
    const SegmentationSample& s = samples.at(static_cast<std::size_t>(indices[k]));
    if (s.image.dim(1) != h || s.image.dim(2) != w)
      fail("stack: sample " + s.id + " has shape " + s.image.shape_str());
    std::copy(s.image.data(), s.image.data() + plane, images.data() + k * plane);
    std::copy(s.mask.data(), s.mask.data() + plane, masks.data() + k * plane);
  }
  return {std::move(images), std::move(masks)};
}

}  // namespace nestseg

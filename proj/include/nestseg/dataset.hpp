#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nestseg/tensor.hpp"

namespace nestseg {

enum class Split { train, val, test };

std::string split_name(Split s);
Split parse_split(const std::string& name);

// One line of the manifest; paths are relative to the manifest's directory.
struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string mask_path;
  Split split = Split::train;
};

struct DatasetManifest {
  std::string root;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> in_split(Split s) const;
};

// Text format: header line "# nestseg-manifest v1", then one
// id<TAB>image<TAB>mask<TAB>split record per line.
void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

struct SegmentationSample {
  std::string id;
  Tensor image;  // [1,H,W], values in [0,1]
  Tensor mask;   // [1,H,W], values exactly 0 or 1
};

// All samples loaded eagerly (the desk-scale sets are a few MB). Images are
// scaled to [0,1]; masks binarize at >127.5. Every sample must share one
// spatial size; violations name the offending file.
class Dataset {
 public:
  static Dataset load(const DatasetManifest& manifest);

  const std::vector<SegmentationSample>& split(Split s) const;
  int height() const { return height_; }
  int width() const { return width_; }

 private:
  std::vector<SegmentationSample> train_, val_, test_;
  int height_ = 0, width_ = 0;
};

// Contiguous index batches; the final batch keeps whatever remains.
std::vector<std::vector<int>> batch_indices(int count, int batch_size);

// Stacks the chosen samples into [B,1,H,W] image and mask tensors.
std::pair<Tensor, Tensor> stack_samples(const std::vector<SegmentationSample>& samples,
                                        const std::vector<int>& indices);

}  // namespace nestseg

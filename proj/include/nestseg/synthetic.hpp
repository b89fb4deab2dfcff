#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestseg/dataset.hpp"

namespace nestseg {

struct SyntheticConfig {
  std::uint64_t seed = 0;
  int count = 200;
  int image_size = 96;
  int min_blobs = 1;
  int max_blobs = 4;
  double noise_level = 0.05;
  // Accepted band for the foreground fraction of each mask; samples outside
  // it are redrawn so no image is all background or mostly blob.
  double min_foreground = 0.05;
  double max_foreground = 0.40;

  void validate() const;
  std::string canonical_text() const;
};

// Writes images/<id>.pgm and masks/<id>.pgm under out_dir and returns the
// manifest (root = out_dir). Images are 1-4 anti-aliased bright ellipses over
// a shaded background with additive Gaussian noise; masks are the exact
// pixel-center ellipse interiors, untouched by noise. Fully determined by the
// config. Sizes not divisible by 16 are padded up with a warning so depth-5
// models accept them.
DatasetManifest generate_synthetic(const SyntheticConfig& config, const std::string& out_dir);

// 70/15/15 by index, remainder to test.
void split_counts(int count, int* train, int* val, int* test);

// Blends one rotated ellipse into a [size*size] intensity buffer (4x4
// supersampled coverage) and ORs its pixel-center interior into the mask.
void add_ellipse(std::vector<double>& image, std::vector<std::uint8_t>& mask, int size, double cx,
                 double cy, double rx, double ry, double angle, double intensity);

}  // namespace nestseg

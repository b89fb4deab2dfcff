#include "nestseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "nestseg/pgm.hpp"
#include "nestseg/rng.hpp"
#include "nestseg/util.hpp"

namespace nestseg {

void SyntheticConfig::validate() const {
  if (count < 1) fail("synthetic: count must be at least 1");
  if (image_size < 16) fail("synthetic: image_size must be at least 16");
  if (min_blobs < 1 || max_blobs < min_blobs)
    fail("synthetic: blob range [" + std::to_string(min_blobs) + ", " +
         std::to_string(max_blobs) + "] is invalid");
  if (noise_level < 0) fail("synthetic: noise_level must be non-negative");
  if (min_foreground < 0 || max_foreground <= min_foreground || max_foreground >= 1)
    fail("synthetic: foreground band [" + fmt_fixed(min_foreground, 3) + ", " +
         fmt_fixed(max_foreground, 3) + "] is invalid");
}

std::string SyntheticConfig::canonical_text() const {
  std::string out;
  out += "seed = " + std::to_string(seed) + "\n";
  out += "count = " + std::to_string(count) + "\n";
  out += "image_size = " + std::to_string(image_size) + "\n";
  out += "min_blobs = " + std::to_string(min_blobs) + "\n";
  out += "max_blobs = " + std::to_string(max_blobs) + "\n";
  out += "noise_level = " + fmt_fixed(noise_level, 6) + "\n";
  out += "min_foreground = " + fmt_fixed(min_foreground, 6) + "\n";
  out += "max_foreground = " + fmt_fixed(max_foreground, 6) + "\n";
  return out;
}

void split_counts(int count, int* train, int* val, int* test) {
  *train = count * 70 / 100;
  *val = count * 15 / 100;
  *test = count - *train - *val;
}

void add_ellipse(std::vector<double>& image, std::vector<std::uint8_t>& mask, int size, double cx,
                 double cy, double rx, double ry, double angle, double intensity) {
  if (image.size() != static_cast<std::size_t>(size) * size ||
      mask.size() != image.size())
    fail("add_ellipse: buffer size does not match image size");
  const double cosa = std::cos(angle), sina = std::sin(angle);
  const double rmax = std::max(rx, ry);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rmax - 1)));
  const int x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + rmax + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - rmax - 1)));
  const int y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + rmax + 1)));

  auto inside = [&](double x, double y) {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cosa + dy * sina) / rx;
    const double v = (-dx * sina + dy * cosa) / ry;
    return u * u + v * v <= 1.0;
  };

  for (int py = y0; py <= y1; ++py) {
    for (int px = x0; px <= x1; ++px) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx)
          hits += inside(px + (sx + 0.5) / 4.0, py + (sy + 0.5) / 4.0);
      const std::size_t p = static_cast<std::size_t>(py) * size + px;
      if (hits > 0) {
        const double coverage = hits / 16.0;
        image[p] = image[p] * (1.0 - coverage) + intensity * coverage;
      }
      if (inside(px + 0.5, py + 0.5)) mask[p] = 255;
    }
  }
}

namespace {

// Draws one image/mask pair; returns false when the foreground fraction
// landed outside the configured band and the sample must be redrawn.
bool draw_sample(const SyntheticConfig& config, int size, Rng& rng,
                 std::vector<std::uint8_t>& image_px, std::vector<std::uint8_t>& mask_px) {
  const std::size_t pixels = static_cast<std::size_t>(size) * size;
  std::vector<double> image(pixels);
  std::vector<std::uint8_t> mask(pixels, 0);

  const double base = rng.uniform(0.10, 0.35);
  const double grad_angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double grad_mag = rng.uniform(0.0, 0.15);
  const double gx = std::cos(grad_angle), gy = std::sin(grad_angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double proj = (gx * x + gy * y) / size;
      image[static_cast<std::size_t>(y) * size + x] = base + grad_mag * proj;
    }

  const int blobs = static_cast<int>(rng.uniform_int(config.min_blobs, config.max_blobs));
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0.2, 0.8) * size;
    const double cy = rng.uniform(0.2, 0.8) * size;
    const double rx = rng.uniform(0.06, 0.22) * size;
    const double ry = rng.uniform(0.06, 0.22) * size;
    const double angle = rng.uniform(0.0, 3.14159265358979323846);
    const double intensity = rng.uniform(0.55, 0.95);
    add_ellipse(image, mask, size, cx, cy, rx, ry, angle, intensity);
  }

  std::size_t fg = 0;
  for (std::uint8_t m : mask) fg += m != 0;
  const double fraction = static_cast<double>(fg) / static_cast<double>(pixels);
  if (fraction < config.min_foreground || fraction > config.max_foreground) return false;

  image_px.resize(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double noisy = image[p] + rng.normal() * config.noise_level;
    image_px[p] = static_cast<std::uint8_t>(std::lround(std::clamp(noisy, 0.0, 1.0) * 255.0));
  }
  mask_px = std::move(mask);
  return true;
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticConfig& config, const std::string& out_dir) {
  config.validate();
  int size = config.image_size;
  if (size % 16 != 0) {
    const int padded = ((size + 15) / 16) * 16;
    std::fprintf(stderr,
                 "synthetic: image size %d is not divisible by 16, padding to %d so depth-5 "
                 "models accept it\n",
                 size, padded);
    size = padded;
  }

  std::filesystem::create_directories(out_dir + "/images");
  std::filesystem::create_directories(out_dir + "/masks");

  int n_train = 0, n_val = 0, n_test = 0;
  split_counts(config.count, &n_train, &n_val, &n_test);

  DatasetManifest manifest;
  manifest.root = out_dir;

  Rng rng(config.seed);
  std::vector<std::uint8_t> image_px, mask_px;
  for (int k = 0; k < config.count; ++k) {
    bool drawn = false;
    for (int attempt = 0; attempt < 100 && !drawn; ++attempt)
      drawn = draw_sample(config, size, rng, image_px, mask_px);
    if (!drawn)
      fail("synthetic: could not hit the foreground band " + fmt_fixed(config.min_foreground, 3) +
           ".." + fmt_fixed(config.max_foreground, 3) + " in 100 attempts; widen the band");

    char id[32];
    std::snprintf(id, sizeof(id), "sample_%04d", k);
    ManifestEntry e;
    e.id = id;
    e.image_path = "images/" + std::string(id) + ".pgm";
    e.mask_path = "masks/" + std::string(id) + ".pgm";
    e.split = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
    write_pgm(out_dir + "/" + e.image_path, image_px, size, size);
    write_pgm(out_dir + "/" + e.mask_path, mask_px, size, size);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

}  // namespace nestseg

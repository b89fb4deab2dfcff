#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nestseg/arch.hpp"
#include "nestseg/rng.hpp"
#include "nestseg/tensor.hpp"

namespace nestseg::testing {

// Fresh per-name scratch directory under the system temp root. Recreated on
// every call so a test never sees a previous run's files.
inline std::string scratch_dir(const std::string& name) {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "nestseg_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline ArchitectureSpec small_unetpp(int depth = 3, int size = 32) {
  ArchitectureSpec s;
  s.variant = Variant::unetpp;
  s.depth = depth;
  s.widths.clear();
  for (int i = 0; i < depth; ++i) s.widths.push_back(8 << i);
  s.deep_supervision = true;
  s.input_channels = 1;
  s.input_h = size;
  s.input_w = size;
  s.validate();
  return s;
}

template <typename T>
TensorBase<T> random_tensor(Rng& rng, std::vector<std::int64_t> shape, T lo = T(-1),
                            T hi = T(1)) {
  TensorBase<T> t(std::move(shape));
  rng.fill_uniform(t, lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return worst;
}

}  // namespace nestseg::testing

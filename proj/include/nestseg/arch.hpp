#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nestseg {

enum class Variant { unet, wide_unet, unetpp };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

// Pyramid node address: i counts down-sampling levels from the full-resolution
// row, j counts positions along the skip pathway. Valid when i+j <= depth-1.
struct NodeId {
  int i = 0;
  int j = 0;
  friend bool operator==(const NodeId&, const NodeId&) = default;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct ArchitectureSpec {
  Variant variant = Variant::unetpp;
  int depth = 5;
  std::vector<int> widths;  // channels per pyramid level, length == depth
  int convs_per_node = 2;
  bool deep_supervision = true;
  int input_channels = 1;
  int input_h = 96;
  int input_w = 96;

  void validate() const;

  // Fixed-order serialization; also the on-disk file format. Equal specs
  // produce equal text, which is what the fingerprint hashes.
  std::string canonical_text() const;
  std::uint64_t fingerprint() const;
};

// "unet", "wide_unet", "unetpp": depth-5 presets on 96x96 single-channel
// input. unetpp trains with deep supervision; the U-Nets have one head.
ArchitectureSpec arch_preset(const std::string& name);
bool is_arch_preset(const std::string& name);

// load accepts a preset name or a spec file path.
ArchitectureSpec load_arch_spec(const std::string& preset_or_path);
void save_arch_spec(const ArchitectureSpec& spec, const std::string& path);
ArchitectureSpec parse_arch_spec(const std::string& text);

}  // namespace nestseg

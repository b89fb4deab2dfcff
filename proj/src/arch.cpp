#include "nestseg/arch.hpp"

#include <filesystem>

#include "nestseg/util.hpp"

namespace nestseg {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::unet: return "unet";
    case Variant::wide_unet: return "wide_unet";
    case Variant::unetpp: return "unetpp";
  }
  fail("unreachable variant");
}

Variant parse_variant(const std::string& name) {
  if (name == "unet") return Variant::unet;
  if (name == "wide_unet") return Variant::wide_unet;
  if (name == "unetpp") return Variant::unetpp;
  fail("unknown variant '" + name + "' (expected unet, wide_unet, or unetpp)");
}

void ArchitectureSpec::validate() const {
  if (depth < 2) fail("arch: depth must be at least 2, got " + std::to_string(depth));
  if (static_cast<int>(widths.size()) != depth)
    fail("arch: " + std::to_string(widths.size()) + " widths for depth " + std::to_string(depth));
  for (int w : widths)
    if (w < 1) fail("arch: widths must be positive");
  if (convs_per_node < 1) fail("arch: convs_per_node must be at least 1");
  if (input_channels < 1) fail("arch: input_channels must be at least 1");
  const int factor = 1 << (depth - 1);
  auto check_side = [&](int v, const char* which) {
    if (v < factor || v % factor != 0) {
      const int padded = ((v + factor - 1) / factor) * factor;
      fail("arch: input " + std::string(which) + " " + std::to_string(v) +
           " is not divisible by 2^(depth-1) = " + std::to_string(factor) + "; pad to " +
           std::to_string(padded));
    }
  };
  check_side(input_h, "height");
  check_side(input_w, "width");
  if (deep_supervision && variant != Variant::unetpp)
    fail("arch: deep supervision requires the unetpp variant");
}

std::string ArchitectureSpec::canonical_text() const {
  std::string w;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    if (k) w += ',';
    w += std::to_string(widths[k]);
  }
  std::string out;
  out += "variant = " + variant_name(variant) + "\n";
  out += "depth = " + std::to_string(depth) + "\n";
  out += "widths = " + w + "\n";
  out += "convs_per_node = " + std::to_string(convs_per_node) + "\n";
  out += "deep_supervision = " + std::string(deep_supervision ? "true" : "false") + "\n";
  out += "input_channels = " + std::to_string(input_channels) + "\n";
  out += "input_size = " + std::to_string(input_h) + "x" + std::to_string(input_w) + "\n";
  return out;
}

std::uint64_t ArchitectureSpec::fingerprint() const { return fnv1a64(canonical_text()); }

ArchitectureSpec arch_preset(const std::string& name) {
  ArchitectureSpec spec;
  spec.variant = parse_variant(name);
  spec.depth = 5;
  spec.convs_per_node = 2;
  spec.input_channels = 1;
  spec.input_h = spec.input_w = 96;
  switch (spec.variant) {
    case Variant::unet:
      spec.widths = {32, 64, 128, 256, 512};
      spec.deep_supervision = false;
      break;
    case Variant::wide_unet:
      spec.widths = {35, 70, 140, 280, 560};
      spec.deep_supervision = false;
      break;
    case Variant::unetpp:
      spec.widths = {32, 64, 128, 256, 512};
      spec.deep_supervision = true;
      break;
  }
  spec.validate();
  return spec;
}

bool is_arch_preset(const std::string& name) {
  return name == "unet" || name == "wide_unet" || name == "unetpp";
}

ArchitectureSpec parse_arch_spec(const std::string& text) {
  const auto kv = parse_kv_text(text);
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) fail("arch spec: missing key '" + key + "'");
    return it->second;
  };
  ArchitectureSpec spec;
  spec.variant = parse_variant(need("variant"));
  spec.depth = static_cast<int>(parse_long(need("depth"), "depth"));
  spec.widths.clear();
  for (const std::string& part : split(need("widths"), ','))
    spec.widths.push_back(static_cast<int>(parse_long(trim(part), "widths entry")));
  spec.convs_per_node = static_cast<int>(parse_long(need("convs_per_node"), "convs_per_node"));
  spec.deep_supervision = parse_bool(need("deep_supervision"), "deep_supervision");
  spec.input_channels = static_cast<int>(parse_long(need("input_channels"), "input_channels"));
  const std::vector<std::string> hw = split(need("input_size"), 'x');
  if (hw.size() != 2) fail("arch spec: input_size must be HxW, got '" + need("input_size") + "'");
  spec.input_h = static_cast<int>(parse_long(trim(hw[0]), "input height"));
  spec.input_w = static_cast<int>(parse_long(trim(hw[1]), "input width"));
  spec.validate();
  return spec;
}

ArchitectureSpec load_arch_spec(const std::string& preset_or_path) {
  if (is_arch_preset(preset_or_path)) return arch_preset(preset_or_path);
  if (!std::filesystem::exists(preset_or_path))
    fail("arch spec '" + preset_or_path + "' is neither a preset name nor an existing file");
  return parse_arch_spec(read_text_file(preset_or_path));
}

void save_arch_spec(const ArchitectureSpec& spec, const std::string& path) {
  spec.validate();
  write_text_file(path, spec.canonical_text());
}

}  // namespace nestseg

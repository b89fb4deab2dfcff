#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nestseg {

// Binary PGM (P5), 8-bit, row-major. The writer emits a minimal fixed-form
// header so equal pixels produce equal files; the reader accepts any valid P5
// header with maxval <= 255, including '#' comments.
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int width,
               int height);
std::vector<std::uint8_t> read_pgm(const std::string& path, int* width, int* height);

}  // namespace nestseg

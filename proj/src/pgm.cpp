#include "nestseg/pgm.hpp"

#include "nestseg/util.hpp"

namespace nestseg {

namespace {

// Skips whitespace and '#' comments, then reads one decimal token.
long next_header_value(const std::string& buf, std::size_t& pos, const std::string& path) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9')
    fail("pgm " + path + ": malformed header");
  long v = 0;
  while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
    v = v * 10 + (buf[pos] - '0');
    ++pos;
  }
  return v;
}

}  // namespace

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int width,
               int height) {
  if (width < 1 || height < 1 ||
      pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    fail("pgm " + path + ": " + std::to_string(pixels.size()) + " pixels for " +
         std::to_string(width) + "x" + std::to_string(height));
  std::string buf = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  buf.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  write_text_file(path, buf);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int* width, int* height) {
  const std::string buf = read_text_file(path);
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
    fail("pgm " + path + ": not a binary P5 file");
  std::size_t pos = 2;
  const long w = next_header_value(buf, pos, path);
  const long h = next_header_value(buf, pos, path);
  const long maxval = next_header_value(buf, pos, path);
  if (w < 1 || h < 1) fail("pgm " + path + ": bad dimensions");
  if (maxval < 1 || maxval > 255) fail("pgm " + path + ": only 8-bit maxval supported");
  pos += 1;  // single whitespace byte separating header and raster
  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (pos + count > buf.size()) fail("pgm " + path + ": truncated raster");
  std::vector<std::uint8_t> pixels(count);
  for (std::size_t k = 0; k < count; ++k) pixels[k] = static_cast<std::uint8_t>(buf[pos + k]);
  *width = static_cast<int>(w);
  *height = static_cast<int>(h);
  return pixels;
}

}  // namespace nestseg

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace nestseg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] void fail(const std::string& msg);

// FNV-1a, used for architecture fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

// Flat `key = value` config files ('#' starts a comment, blank lines ignored).
// Duplicate keys keep the last occurrence.
std::map<std::string, std::string> read_kv_file(const std::string& path);
std::map<std::string, std::string> parse_kv_text(const std::string& text);

long parse_long(const std::string& s, const std::string& what);
double parse_double(const std::string& s, const std::string& what);
bool parse_bool(const std::string& s, const std::string& what);

// Fixed-width float formatting for CSV output; deterministic for equal inputs.
std::string fmt_fixed(double v, int digits = 6);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

// NESTSEG_THREADS, clamped to [1, 64]; 1 when unset or unparsable.
int intra_op_threads();

}  // namespace nestseg

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace format_adapter {

// Hex-encoded SHA-256 digest.
std::string sha256_hex(std::string_view data);

// First 8 bytes of the SHA-256 digest as an integer; stable across platforms.
std::uint64_t stable_hash64(std::string_view data);

// Portable draws from a 64-bit engine. The standard distributions are
// implementation-defined, so simulated output would differ between standard
// libraries if we used them.
double unit_uniform(std::mt19937_64& rng);
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
std::string to_upper(std::string_view text);
bool iequals(std::string_view a, std::string_view b);
std::vector<std::string> split_lines(std::string_view text);

}  // namespace format_adapter

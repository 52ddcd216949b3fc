#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace printloop {

std::string sha256_hex(std::string_view data);

/// UUID-formatted (8-4-4-4-12) id derived from a SHA-256 of `seed`.
std::string derived_uuid(std::string_view seed);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// "1.050" style fixed formatting that never yields "-0.000".
std::string fixed(double value, int decimals);

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string_view> split_ws(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace printloop

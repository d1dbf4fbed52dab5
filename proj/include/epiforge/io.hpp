#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace epiforge::io {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

std::vector<std::string> split_lines(const std::string& text);
std::vector<std::string> split(const std::string& line, char sep);

// Round-trip exact formatting for doubles (shortest representation).
std::string format_double(double value);
double parse_double(const std::string& text);
long long parse_int(const std::string& text);

// FNV-1a 64-bit; used for config and artifact fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xCBF29CE484222325ull);
std::uint64_t fnv1a(const std::string& text);
std::string hash_file_hex(const std::filesystem::path& path);
std::string to_hex(std::uint64_t value);

} // namespace epiforge::io

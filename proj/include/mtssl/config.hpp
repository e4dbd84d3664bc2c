#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mtssl {

// One `key = value` line of a plain-text config file.
struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

// Parses `key = value` lines. Blank lines and lines starting with '#' are
// skipped; duplicate keys and lines without '=' are errors.
std::vector<ConfigEntry> parse_config_text(std::string_view text);
std::vector<ConfigEntry> load_config_file(const std::filesystem::path& path);

double parse_real(const ConfigEntry& e);
std::uint64_t parse_unsigned(const ConfigEntry& e);
bool parse_bool(const ConfigEntry& e);
// Comma-separated list; surrounding whitespace trimmed, empty items dropped.
std::vector<std::string> parse_list(const ConfigEntry& e);
std::vector<std::size_t> parse_unsigned_list(const ConfigEntry& e);

std::string trim(std::string_view s);

}  // namespace mtssl

#include "mtssl/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "mtssl/error.hpp"

namespace mtssl {

namespace {

[[noreturn]] void bad_value(const ConfigEntry& e, const char* expected) {
  throw ConfigError("line " + std::to_string(e.line) + ": key '" + e.key + "' expects " + expected + ", got '" +
                    e.value + "'");
}

}  // namespace

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<ConfigEntry> parse_config_text(std::string_view text) {
  std::vector<ConfigEntry> entries;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    ConfigEntry e{trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(e.key).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + e.key + "'");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ConfigEntry> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config_text(buf.str());
  } catch (const ConfigError& err) {
    throw ConfigError(path.string() + ": " + err.what());
  }
}

double parse_real(const ConfigEntry& e) {
  try {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used != e.value.size()) bad_value(e, "a real number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(e, "a real number");
  }
}

std::uint64_t parse_unsigned(const ConfigEntry& e) {
  std::uint64_t v = 0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) bad_value(e, "a non-negative integer");
  return v;
}

bool parse_bool(const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  bad_value(e, "true or false");
}

std::vector<std::string> parse_list(const ConfigEntry& e) {
  std::vector<std::string> items;
  std::size_t pos = 0;
  while (pos <= e.value.size()) {
    const auto comma = e.value.find(',', pos);
    std::string item = trim(std::string_view(e.value).substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (!item.empty()) items.push_back(std::move(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return items;
}

std::vector<std::size_t> parse_unsigned_list(const ConfigEntry& e) {
  std::vector<std::size_t> out;
  for (const auto& item : parse_list(e)) {
    out.push_back(static_cast<std::size_t>(parse_unsigned(ConfigEntry{e.key, item, e.line})));
  }
  return out;
}

}  // namespace mtssl

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string_view>

namespace mtssl {

// Writes through a sibling temp file and renames it over `path`, so a failed
// write never leaves a partial file at the target.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);
void atomic_write(const std::filesystem::path& path, std::string_view content);

}  // namespace mtssl

#include "mtssl/io.hpp"

#include <fstream>
#include <string>

#include "mtssl/error.hpp"

namespace mtssl {

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
      writer(out);
      out.flush();
      if (!out) throw Error("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw;
  }
}

void atomic_write(const std::filesystem::path& path, std::string_view content) {
  atomic_write(path, [&](std::ostream& out) { out << content; });
}

}  // namespace mtssl

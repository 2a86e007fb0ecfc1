#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace isotropy {

// Writes to a sibling temp file and renames it over the target, so readers
// never observe a partial file. Parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace isotropy

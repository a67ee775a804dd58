#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace milbench {

std::string read_text(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename so readers never observe a
/// partial file. Parent directories are created.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

} // namespace milbench

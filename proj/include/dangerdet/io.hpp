#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <opencv2/core.hpp>

namespace dangerdet {

std::string read_text_file(const std::filesystem::path& path, std::string_view module);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes,
                       std::string_view module);

void write_png_atomic(const std::filesystem::path& path, const cv::Mat& image,
                      std::string_view module);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace dangerdet

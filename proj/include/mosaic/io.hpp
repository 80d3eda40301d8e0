#pragma once

#include <string>

namespace mosaic {

// Writes to <path>.tmp in the same directory, then renames over path, so an
// interrupted run never leaves a partial file behind.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// %.17g formatting: shortest text that round-trips the exact double.
std::string format_double(double v);

}  // namespace mosaic

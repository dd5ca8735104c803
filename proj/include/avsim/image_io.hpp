#pragma once

#include <filesystem>

#include "avsim/camera.hpp"

namespace avsim {

// 8-bit grayscale export. Both throw UserError when the file cannot be written.
void write_pgm(const Frame& frame, const std::filesystem::path& path);
void write_png(const Frame& frame, const std::filesystem::path& path);

// Picks the format from the extension (.png or .pgm).
void write_image(const Frame& frame, const std::filesystem::path& path);

}  // namespace avsim

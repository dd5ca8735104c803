#include "avsim/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>

#include "avsim/error.hpp"

namespace avsim {

namespace {

void check_frame(const Frame& f) {
  if (f.width <= 0 || f.height <= 0 ||
      f.pixels.size() != static_cast<std::size_t>(f.width) * static_cast<std::size_t>(f.height)) {
    throw ContractViolation("frame buffer does not match its size");
  }
}

}  // namespace

void write_pgm(const Frame& frame, const std::filesystem::path& path) {
  check_frame(frame);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  out << "P5\n" << frame.width << " " << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
  if (!out) throw UserError("write failed: " + path.string());
}

void write_png(const Frame& frame, const std::filesystem::path& path) {
  check_frame(frame);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw UserError("cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw UserError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw UserError("png encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(frame.width),
               static_cast<png_uint_32>(frame.height), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < frame.height; ++y) {
    png_write_row(png, frame.pixels.data() + static_cast<std::size_t>(y) * frame.width);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_image(const Frame& frame, const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") {
    write_png(frame, path);
  } else if (ext == ".pgm") {
    write_pgm(frame, path);
  } else {
    throw UserError("unsupported image extension '" + ext + "' (use .png or .pgm)");
  }
}

}  // namespace avsim

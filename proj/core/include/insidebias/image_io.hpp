#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace insidebias::data {

/// 8-bit interleaved RGB image.
struct ImageRgb8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // height*width*3, row-major RGB
};

/// Reads .png or .ppm (P6) by extension. Grayscale PNGs are expanded to RGB.
ImageRgb8 read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const ImageRgb8& img);
void write_ppm(const std::filesystem::path& path, const ImageRgb8& img);

}  // namespace insidebias::data

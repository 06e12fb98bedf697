#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ivfuse::data {

// 8-bit interleaved raster, row-major. channels is 1 (gray) or 3 (RGB);
// readers drop a fully opaque alpha channel.
struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int row, int col, int ch) const {
        return pixels[static_cast<std::size_t>((row * width + col) * channels + ch)];
    }
};

// Dispatches on file signature (PNG) or extension (.bmp). 8-bit only;
// 16-bit PNGs raise FormatError.
RawImage read_image(const std::string& path);

void write_png(const std::string& path, const RawImage& img);
void write_bmp(const std::string& path, const RawImage& img);

}  // namespace ivfuse::data

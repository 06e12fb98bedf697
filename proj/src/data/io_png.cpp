#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "ivfuse/core/errors.hpp"
#include "ivfuse/data/io.hpp"

namespace ivfuse::data {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Drops an alpha channel (expected to come from fully opaque sources).
RawImage strip_alpha(RawImage img) {
    if (img.channels != 2 && img.channels != 4) return img;
    int keep = img.channels - 1;
    RawImage out;
    out.width = img.width;
    out.height = img.height;
    out.channels = keep;
    out.pixels.resize(static_cast<std::size_t>(img.width) * img.height * keep);
    std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < keep; ++c)
            out.pixels[i * keep + c] = img.pixels[i * img.channels + c];
    return out;
}

RawImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> rows;
    RawImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("malformed PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 width = png_get_image_width(png, info);
    png_uint_32 height = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unsupported bit depth 16: " + path);
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);

    int channels = png_get_channels(png, info);
    img.width = static_cast<int>(width);
    img.height = static_cast<int>(height);
    img.channels = channels;
    img.pixels.resize(static_cast<std::size_t>(width) * height * channels);
    rows.resize(height);
    std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (png_uint_32 r = 0; r < height; ++r) rows[r] = img.pixels.data() + r * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return strip_alpha(std::move(img));
}

RawImage read_bmp(const std::string& path);

}  // namespace

void write_png(const std::string& path, const RawImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw ValidationError("write_png: channels must be 1 or 3");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    for (int r = 0; r < img.height; ++r)
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + r * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

bool has_png_signature(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image: " + path);
    unsigned char sig[8] = {};
    if (std::fread(sig, 1, 8, fp.get()) != 8) return false;
    return png_sig_cmp(sig, 0, 8) == 0;
}

}  // namespace

RawImage read_image(const std::string& path) {
    if (has_png_signature(path)) return read_png(path);
    // fall through to BMP for anything that is not a PNG
    return read_bmp(path);
}

namespace {

std::uint32_t rd_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::int32_t rd_i32(const std::uint8_t* p) { return static_cast<std::int32_t>(rd_u32(p)); }
std::uint16_t rd_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

// Uncompressed BI_RGB BMP, 8-bit paletted or 24-bit.
RawImage read_bmp(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image: " + path);
    std::uint8_t hdr[54];
    if (std::fread(hdr, 1, 54, fp.get()) != 54 || hdr[0] != 'B' || hdr[1] != 'M')
        throw FormatError("not a BMP file: " + path);
    std::uint32_t data_off = rd_u32(hdr + 10);
    std::uint32_t info_size = rd_u32(hdr + 14);
    std::int32_t w = rd_i32(hdr + 18);
    std::int32_t h = rd_i32(hdr + 22);
    std::uint16_t bpp = rd_u16(hdr + 28);
    std::uint32_t compression = rd_u32(hdr + 30);
    std::uint32_t colors_used = rd_u32(hdr + 46);
    if (compression != 0) throw FormatError("compressed BMP unsupported: " + path);
    if (bpp != 8 && bpp != 24) throw FormatError("unsupported BMP bit depth: " + path);
    bool flip = h > 0;
    std::int32_t ah = std::abs(h);
    if (w <= 0 || ah <= 0) throw FormatError("bad BMP dimensions: " + path);

    std::vector<std::uint8_t> palette;  // BGRA entries
    bool palette_gray = true;
    if (bpp == 8) {
        std::uint32_t ncolors = colors_used ? colors_used : 256;
        palette.resize(ncolors * 4);
        if (std::fseek(fp.get(), static_cast<long>(14 + info_size), SEEK_SET) != 0 ||
            std::fread(palette.data(), 1, palette.size(), fp.get()) != palette.size())
            throw FormatError("truncated BMP palette: " + path);
        for (std::uint32_t i = 0; i < ncolors; ++i)
            if (palette[i * 4] != palette[i * 4 + 1] || palette[i * 4] != palette[i * 4 + 2])
                palette_gray = false;
    }

    RawImage img;
    img.width = w;
    img.height = ah;
    img.channels = (bpp == 8 && palette_gray) ? 1 : 3;
    img.pixels.resize(static_cast<std::size_t>(w) * ah * img.channels);

    if (std::fseek(fp.get(), static_cast<long>(data_off), SEEK_SET) != 0)
        throw FormatError("truncated BMP: " + path);
    std::size_t row_bytes = (static_cast<std::size_t>(w) * bpp / 8 + 3) & ~std::size_t(3);
    std::vector<std::uint8_t> row(row_bytes);
    for (std::int32_t r = 0; r < ah; ++r) {
        if (std::fread(row.data(), 1, row_bytes, fp.get()) != row_bytes)
            throw FormatError("truncated BMP: " + path);
        std::int32_t dst_r = flip ? ah - 1 - r : r;
        for (std::int32_t c = 0; c < w; ++c) {
            if (bpp == 8) {
                std::size_t pi = static_cast<std::size_t>(row[static_cast<std::size_t>(c)]) * 4;
                if (pi + 3 >= palette.size()) throw FormatError("BMP palette index out of range");
                if (img.channels == 1) {
                    img.pixels[static_cast<std::size_t>(dst_r * w + c)] = palette[pi];
                } else {
                    std::size_t o = static_cast<std::size_t>(dst_r * w + c) * 3;
                    img.pixels[o + 0] = palette[pi + 2];
                    img.pixels[o + 1] = palette[pi + 1];
                    img.pixels[o + 2] = palette[pi + 0];
                }
            } else {
                std::size_t o = static_cast<std::size_t>(dst_r * w + c) * 3;
                img.pixels[o + 0] = row[static_cast<std::size_t>(c) * 3 + 2];  // BGR -> RGB
                img.pixels[o + 1] = row[static_cast<std::size_t>(c) * 3 + 1];
                img.pixels[o + 2] = row[static_cast<std::size_t>(c) * 3 + 0];
            }
        }
    }
    return img;
}

void wr_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x & 0xff));
    v.push_back(static_cast<std::uint8_t>((x >> 8) & 0xff));
    v.push_back(static_cast<std::uint8_t>((x >> 16) & 0xff));
    v.push_back(static_cast<std::uint8_t>((x >> 24) & 0xff));
}
void wr_u16(std::vector<std::uint8_t>& v, std::uint16_t x) {
    v.push_back(static_cast<std::uint8_t>(x & 0xff));
    v.push_back(static_cast<std::uint8_t>((x >> 8) & 0xff));
}

}  // namespace

void write_bmp(const std::string& path, const RawImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw ValidationError("write_bmp: channels must be 1 or 3");
    // always writes 24-bit BI_RGB
    std::size_t row_bytes = (static_cast<std::size_t>(img.width) * 3 + 3) & ~std::size_t(3);
    std::uint32_t data_size = static_cast<std::uint32_t>(row_bytes * img.height);
    std::vector<std::uint8_t> out;
    out.reserve(54 + data_size);
    out.push_back('B');
    out.push_back('M');
    wr_u32(out, 54 + data_size);
    wr_u32(out, 0);
    wr_u32(out, 54);
    wr_u32(out, 40);
    wr_u32(out, static_cast<std::uint32_t>(img.width));
    wr_u32(out, static_cast<std::uint32_t>(img.height));
    wr_u16(out, 1);
    wr_u16(out, 24);
    wr_u32(out, 0);
    wr_u32(out, data_size);
    wr_u32(out, 2835);
    wr_u32(out, 2835);
    wr_u32(out, 0);
    wr_u32(out, 0);
    for (int r = img.height - 1; r >= 0; --r) {
        std::size_t start = out.size();
        for (int c = 0; c < img.width; ++c) {
            std::uint8_t rr, gg, bb;
            if (img.channels == 1) {
                rr = gg = bb = img.at(r, c, 0);
            } else {
                rr = img.at(r, c, 0);
                gg = img.at(r, c, 1);
                bb = img.at(r, c, 2);
            }
            out.push_back(bb);
            out.push_back(gg);
            out.push_back(rr);
        }
        while (out.size() - start < row_bytes) out.push_back(0);
    }
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::size_t n = std::fwrite(out.data(), 1, out.size(), f);
    std::fclose(f);
    if (n != out.size()) throw IoError("BMP write failed: " + path);
}

}  // namespace ivfuse::data

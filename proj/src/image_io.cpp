#include "splatlab/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include <png.h>

#include "splatlab/common.hpp"

namespace splatlab {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

void write_png(const std::string& path, const ImageBuffer& image) {
    if (image.channels != 1 && image.channels != 3)
        throw Error(ErrorKind::DataError, "write_png supports 1 or 3 channels: " + path);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error(ErrorKind::DataError, "cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw Error(ErrorKind::DataError, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::DataError, "libpng write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, image.width, image.height, 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(image.width) * image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                double v = std::clamp(image.at(x, y, c), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * image.channels + c] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageBuffer read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error(ErrorKind::DataError, "cannot open: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw Error(ErrorKind::DataError, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::DataError, "libpng read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 width = png_get_image_width(png, info);
    png_uint_32 height = png_get_image_height(png, info);
    // Normalize exotic formats to 8-bit gray or RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3)
        throw Error(ErrorKind::DataError, "unsupported PNG channel count: " + path);

    ImageBuffer image(static_cast<int>(width), static_cast<int>(height), channels);
    std::vector<png_byte> row(static_cast<std::size_t>(width) * channels);
    for (png_uint_32 y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                image.at(static_cast<int>(x), static_cast<int>(y), c) =
                    row[static_cast<std::size_t>(x) * channels + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_pfm(const std::string& path, const ImageBuffer& image) {
    if (image.channels != 1)
        throw Error(ErrorKind::DataError, "write_pfm expects a single channel: " + path);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error(ErrorKind::DataError, "cannot open for writing: " + path);
    std::fprintf(fp.get(), "Pf\n%d %d\n-1.0\n", image.width, image.height);
    std::vector<float> row(image.width);
    for (int y = image.height - 1; y >= 0; --y) { // PFM rows run bottom-up
        for (int x = 0; x < image.width; ++x) row[x] = static_cast<float>(image.at(x, y));
        if (std::fwrite(row.data(), sizeof(float), row.size(), fp.get()) != row.size())
            throw Error(ErrorKind::DataError, "short write: " + path);
    }
}

ImageBuffer read_pfm(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw Error(ErrorKind::DataError, "cannot open: " + path);
    char magic[3] = {};
    int width = 0, height = 0;
    double scale = 0.0;
    if (std::fscanf(fp.get(), "%2s %d %d %lf", magic, &width, &height, &scale) != 4 ||
        std::strcmp(magic, "Pf") != 0 || width <= 0 || height <= 0)
        throw Error(ErrorKind::DataError, "bad PFM header: " + path);
    std::fgetc(fp.get()); // consume the single whitespace after the header
    if (scale > 0.0)
        throw Error(ErrorKind::DataError, "big-endian PFM not supported: " + path);

    ImageBuffer image(width, height, 1);
    std::vector<float> row(width);
    for (int y = height - 1; y >= 0; --y) {
        if (std::fread(row.data(), sizeof(float), row.size(), fp.get()) != row.size())
            throw Error(ErrorKind::DataError, "short read: " + path);
        for (int x = 0; x < width; ++x) image.at(x, y) = row[x];
    }
    return image;
}

ImageBuffer downscale(const ImageBuffer& image, int factor) {
    if (factor <= 0 || image.width % factor != 0 || image.height % factor != 0)
        throw Error(ErrorKind::DataError, "downscale factor must divide the image size");
    ImageBuffer out(image.width / factor, image.height / factor, image.channels);
    double inv = 1.0 / (factor * factor);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        acc += image.at(x * factor + dx, y * factor + dy, c);
                out.at(x, y, c) = acc * inv;
            }
    return out;
}

} // namespace splatlab

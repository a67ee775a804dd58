#include "milbench/image.hpp"

#include <algorithm>
#include <cstring>

#include <png.h>

#include "milbench/error.hpp"

namespace milbench {

RgbImage read_png_rgb(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        std::string reason = png.message;
        png_image_free(&png);
        fail(ErrorCode::StorageError, "cannot read PNG " + path.string() + ": " + reason);
    }
    png.format = PNG_FORMAT_RGB;
    RgbImage image;
    image.width = static_cast<int>(png.width);
    image.height = static_cast<int>(png.height);
    image.pixels.resize(PNG_IMAGE_SIZE(png));
    png_color background{255, 255, 255};
    if (!png_image_finish_read(&png, &background, image.pixels.data(), 0, nullptr)) {
        std::string reason = png.message;
        png_image_free(&png);
        fail(ErrorCode::StorageError, "cannot decode PNG " + path.string() + ": " + reason);
    }
    return image;
}

namespace {

void write_png(const std::filesystem::path& path, int width, int height, png_uint_32 format,
               const std::uint8_t* data) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(width);
    png.height = static_cast<png_uint_32>(height);
    png.format = format;
    if (!png_image_write_to_file(&png, path.c_str(), 0, data, 0, nullptr)) {
        std::string reason = png.message;
        png_image_free(&png);
        fail(ErrorCode::StorageError, "cannot write PNG " + path.string() + ": " + reason);
    }
}

} // namespace

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
    write_png(path, image.width, image.height, PNG_FORMAT_RGB, image.pixels.data());
}

void write_png_gray(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& gray) {
    if (gray.size() != static_cast<std::size_t>(width) * height) {
        fail(ErrorCode::ShapeError, "gray buffer does not match image extent");
    }
    write_png(path, width, height, PNG_FORMAT_GRAY, gray.data());
}

RgbImage downsample_area(const RgbImage& image, int factor) {
    if (factor <= 1) {
        return image;
    }
    const int out_w = (image.width + factor - 1) / factor;
    const int out_h = (image.height + factor - 1) / factor;
    RgbImage out(out_w, out_h);
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const int x_end = std::min(image.width, (ox + 1) * factor);
            const int y_end = std::min(image.height, (oy + 1) * factor);
            for (int c = 0; c < 3; ++c) {
                unsigned sum = 0;
                unsigned count = 0;
                for (int y = oy * factor; y < y_end; ++y) {
                    for (int x = ox * factor; x < x_end; ++x) {
                        sum += image.at(x, y, c);
                        ++count;
                    }
                }
                out.at(ox, oy, c) = static_cast<std::uint8_t>((sum + count / 2) / count);
            }
        }
    }
    return out;
}

} // namespace milbench

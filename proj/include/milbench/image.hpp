#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace milbench {

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

    bool empty() const noexcept { return width <= 0 || height <= 0; }

    std::uint8_t& at(int x, int y, int channel) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
    }
    std::uint8_t at(int x, int y, int channel) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
    }

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        at(x, y, 0) = r;
        at(x, y, 1) = g;
        at(x, y, 2) = b;
    }
};

/// Decodes any PNG to 8-bit RGB (alpha composited on white).
/// Throws Error{StorageError} on unreadable or invalid files.
RgbImage read_png_rgb(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

void write_png_gray(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& gray);

/// Integer-factor area-average downscale; partial blocks at the right and
/// bottom edges average the pixels they contain.
RgbImage downsample_area(const RgbImage& image, int factor);

} // namespace milbench

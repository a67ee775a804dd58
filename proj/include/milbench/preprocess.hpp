#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "milbench/image.hpp"

namespace milbench {

struct SlideGeometry {
    std::string slide_id;
    std::int64_t width_px = 0;
    std::int64_t height_px = 0;
    double base_mpp = 0.0;

    /// Throws Error{InvalidInput} when the invariants do not hold.
    void validate() const;
};

/// A downsampled RGB view of a slide; `downsample` is base px per thumbnail px.
struct Thumbnail {
    RgbImage image;
    double downsample = 1.0;
};

/// Inclusive hue/saturation window and half-open value window [val_min, val_below).
/// Hue in degrees [0, 360); saturation and value in [0, 1].
struct HsvRange {
    double hue_lo = 0.0;
    double hue_hi = 360.0;
    double sat_min = 0.0;
    double val_min = 0.0;
    double val_below = 2.0;
};

struct PenRanges {
    std::vector<HsvRange> ranges;

    /// Blue, green and black marker defaults.
    static PenRanges defaults();
};

struct Hsv {
    double hue = 0.0;
    double sat = 0.0;
    double val = 0.0;
};

Hsv rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept;

struct TissueMask {
    int width = 0;
    int height = 0;
    double downsample = 1.0;
    std::vector<std::uint8_t> bits;
    double tissue_fraction = 0.0;
    /// Set when the grayscale histogram had a single occupied bin.
    bool degenerate = false;

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
};

struct TileCoord {
    std::uint32_t x = 0;
    std::uint32_t y = 0;

    friend bool operator==(const TileCoord&, const TileCoord&) = default;
};

struct TileGrid {
    std::string slide_id;
    int tile_px = 224;
    /// Effective resolution after snapping to an integer downscale level.
    double target_mpp = 0.5;
    /// Base-level distance between neighbouring tile origins.
    std::uint32_t stride_base_px = 224;
    std::vector<TileCoord> tiles;
    std::vector<double> tissue_frac;

    std::size_t size() const noexcept { return tiles.size(); }
};

struct TilingOptions {
    int tile_px = 224;
    double target_mpp = 0.5;
    /// Stride at target resolution; zero means tile_px (non-overlapping).
    int stride_px = 0;
    double min_tissue_frac = 0.25;
};

using Histogram = std::array<std::uint64_t, 256>;

/// 5x5 binomial blur with edge replication, per channel, rounded to nearest.
RgbImage gaussian_blur5(const RgbImage& image);

/// Rounded luma 0.299R + 0.587G + 0.114B.
std::vector<std::uint8_t> to_grayscale(const RgbImage& image);

Histogram histogram(const std::vector<std::uint8_t>& gray);

/// Threshold maximizing between-class variance of [0..t] vs [t+1..255];
/// ties go to the smallest t. Throws Error{DegenerateHistogram} when fewer
/// than two bins are occupied.
int otsu_threshold(const Histogram& counts);

std::vector<std::uint8_t> pen_mask(const RgbImage& image, const PenRanges& pens = PenRanges::defaults());

/// blur -> grayscale -> Otsu -> (gray <= t) and not pen. A degenerate
/// histogram yields an all-false mask with `degenerate` set.
TissueMask build_tissue_mask(const Thumbnail& thumb, const PenRanges& pens = PenRanges::defaults());

/// Integer base->target downscale level: max(1, round(target / base)).
int downscale_level(double base_mpp, double target_mpp);

/// Area-weighted tissue fraction of a base-level rectangle projected onto the mask.
double footprint_tissue_fraction(const TissueMask& mask, double x0, double y0, double x1, double y1);

/// Row-major grid of tiles whose projected footprint meets min_tissue_frac.
/// Throws Error{UnsupportedResolution} if target_mpp < base_mpp.
TileGrid enumerate_tiles(const TissueMask& mask, const SlideGeometry& geom, const TilingOptions& options);

// file interfaces

SlideGeometry read_geometry_json(const std::filesystem::path& path);

void write_tile_grid_csv(const std::filesystem::path& path, const TileGrid& grid);

std::string tile_grid_csv(const TileGrid& grid);

TileGrid read_tile_grid_csv(const std::filesystem::path& path);

/// Mask as 8-bit PNG, 255 = tissue.
void write_mask_png(const std::filesystem::path& path, const TissueMask& mask);

} // namespace milbench

#include "milbench/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "milbench/csv.hpp"
#include "milbench/error.hpp"
#include "milbench/io.hpp"

namespace milbench {

void SlideGeometry::validate() const {
    if (width_px <= 0 || height_px <= 0) {
        fail(ErrorCode::InvalidInput, "slide " + slide_id + ": extent must be positive");
    }
    if (!(base_mpp > 0.0 && base_mpp <= 10.0)) {
        fail(ErrorCode::InvalidInput, "slide " + slide_id + ": base_mpp must lie in (0, 10]");
    }
}

PenRanges PenRanges::defaults() {
    PenRanges pens;
    pens.ranges.push_back({200.0, 260.0, 0.30, 0.20, 2.0}); // blue
    pens.ranges.push_back({80.0, 160.0, 0.30, 0.20, 2.0});  // green
    pens.ranges.push_back({0.0, 360.0, 0.0, 0.0, 0.20});    // black
    return pens;
}

Hsv rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept {
    const int hi = std::max({r, g, b});
    const int lo = std::min({r, g, b});
    const double delta = hi - lo;
    Hsv out;
    out.val = hi / 255.0;
    out.sat = hi == 0 ? 0.0 : delta / hi;
    if (delta == 0.0) {
        out.hue = 0.0;
    } else if (hi == r) {
        out.hue = 60.0 * std::fmod((g - b) / delta + 6.0, 6.0);
    } else if (hi == g) {
        out.hue = 60.0 * ((b - r) / delta + 2.0);
    } else {
        out.hue = 60.0 * ((r - g) / delta + 4.0);
    }
    if (out.hue >= 360.0) {
        out.hue -= 360.0;
    }
    return out;
}

RgbImage gaussian_blur5(const RgbImage& image) {
    if (image.empty()) {
        fail(ErrorCode::InvalidInput, "gaussian_blur5: empty image");
    }
    static constexpr int kTaps[5] = {1, 4, 6, 4, 1};
    const int w = image.width;
    const int h = image.height;

    // horizontal pass keeps exact integer sums (scale 16)
    std::vector<int> rows(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                int acc = 0;
                for (int k = -2; k <= 2; ++k) {
                    const int xx = std::clamp(x + k, 0, w - 1);
                    acc += kTaps[k + 2] * image.at(xx, y, c);
                }
                rows[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
            }
        }
    }

    RgbImage out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                int acc = 0;
                for (int k = -2; k <= 2; ++k) {
                    const int yy = std::clamp(y + k, 0, h - 1);
                    acc += kTaps[k + 2] * rows[(static_cast<std::size_t>(yy) * w + x) * 3 + c];
                }
                out.at(x, y, c) = static_cast<std::uint8_t>((acc + 128) >> 8);
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> to_grayscale(const RgbImage& image) {
    std::vector<std::uint8_t> gray(static_cast<std::size_t>(image.width) * image.height);
    for (std::size_t i = 0; i < gray.size(); ++i) {
        const unsigned r = image.pixels[i * 3];
        const unsigned g = image.pixels[i * 3 + 1];
        const unsigned b = image.pixels[i * 3 + 2];
        gray[i] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
    }
    return gray;
}

Histogram histogram(const std::vector<std::uint8_t>& gray) {
    Histogram counts{};
    for (const auto v : gray) {
        ++counts[v];
    }
    return counts;
}

namespace {

using u128 = unsigned __int128;
using i128 = __int128;

// num_a * den_b > num_b * den_a with 192-bit intermediates
bool ratio_greater(u128 num_a, std::uint64_t den_a, u128 num_b, std::uint64_t den_b) {
    auto widen = [](u128 num, std::uint64_t den) {
        const u128 lo = static_cast<u128>(static_cast<std::uint64_t>(num)) * den;
        const u128 hi = static_cast<u128>(static_cast<std::uint64_t>(num >> 64)) * den;
        const u128 top = hi + (lo >> 64);
        const std::uint64_t bottom = static_cast<std::uint64_t>(lo);
        return std::pair<u128, std::uint64_t>{top, bottom};
    };
    const auto lhs = widen(num_a, den_b);
    const auto rhs = widen(num_b, den_a);
    return lhs > rhs;
}

} // namespace

int otsu_threshold(const Histogram& counts) {
    int occupied = 0;
    std::uint64_t total = 0;
    std::uint64_t weighted = 0;
    for (int i = 0; i < 256; ++i) {
        if (counts[i] > 0) {
            ++occupied;
        }
        total += counts[i];
        weighted += counts[i] * static_cast<std::uint64_t>(i);
    }
    if (occupied < 2) {
        fail(ErrorCode::DegenerateHistogram, "histogram has fewer than two occupied bins");
    }

    // Between-class variance is proportional to (N*S0 - N0*S)^2 / (N0*N1).
    // Exact integer comparison whenever |N*S0 - N0*S| fits 64 bits.
    const bool exact = total < (std::uint64_t{1} << 28);
    int best_t = -1;
    u128 best_num = 0;
    std::uint64_t best_den = 1;
    long double best_value = -1.0L;

    std::uint64_t n0 = 0;
    std::uint64_t s0 = 0;
    for (int t = 0; t < 255; ++t) {
        n0 += counts[t];
        s0 += counts[t] * static_cast<std::uint64_t>(t);
        const std::uint64_t n1 = total - n0;
        if (n0 == 0 || n1 == 0) {
            continue;
        }
        if (exact) {
            const i128 diff = static_cast<i128>(total) * s0 - static_cast<i128>(n0) * weighted;
            const u128 mag = static_cast<u128>(diff < 0 ? -diff : diff);
            const u128 num = mag * mag;
            const std::uint64_t den = n0 * n1;
            if (best_t < 0 || ratio_greater(num, den, best_num, best_den)) {
                best_t = t;
                best_num = num;
                best_den = den;
            }
        } else {
            const long double mu0 = static_cast<long double>(s0) / n0;
            const long double mu1 = static_cast<long double>(weighted - s0) / n1;
            const long double value =
                static_cast<long double>(n0) * n1 * (mu0 - mu1) * (mu0 - mu1);
            if (value > best_value) {
                best_value = value;
                best_t = t;
            }
        }
    }
    return best_t;
}

std::vector<std::uint8_t> pen_mask(const RgbImage& image, const PenRanges& pens) {
    if (image.empty()) {
        fail(ErrorCode::InvalidInput, "pen_mask: empty image");
    }
    const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const Hsv hsv = rgb_to_hsv(image.pixels[i * 3], image.pixels[i * 3 + 1], image.pixels[i * 3 + 2]);
        for (const auto& range : pens.ranges) {
            if (hsv.hue >= range.hue_lo && hsv.hue <= range.hue_hi && hsv.sat >= range.sat_min &&
                hsv.val >= range.val_min && hsv.val < range.val_below) {
                mask[i] = 1;
                break;
            }
        }
    }
    return mask;
}

TissueMask build_tissue_mask(const Thumbnail& thumb, const PenRanges& pens) {
    const RgbImage& image = thumb.image;
    if (image.empty()) {
        fail(ErrorCode::InvalidInput, "build_tissue_mask: empty image");
    }
    TissueMask mask;
    mask.width = image.width;
    mask.height = image.height;
    mask.downsample = thumb.downsample;
    mask.bits.assign(static_cast<std::size_t>(image.width) * image.height, 0);

    const auto gray = to_grayscale(gaussian_blur5(image));
    int threshold = 0;
    try {
        threshold = otsu_threshold(histogram(gray));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateHistogram) {
            throw;
        }
        mask.degenerate = true;
        return mask;
    }

    const auto pens_hit = pen_mask(image, pens);
    std::size_t tissue = 0;
    for (std::size_t i = 0; i < gray.size(); ++i) {
        const bool on = gray[i] <= threshold && pens_hit[i] == 0;
        mask.bits[i] = on ? 1 : 0;
        tissue += on ? 1 : 0;
    }
    mask.tissue_fraction = static_cast<double>(tissue) / static_cast<double>(gray.size());
    return mask;
}

int downscale_level(double base_mpp, double target_mpp) {
    return std::max(1, static_cast<int>(std::lround(target_mpp / base_mpp)));
}

double footprint_tissue_fraction(const TissueMask& mask, double x0, double y0, double x1, double y1) {
    const double ds = mask.downsample;
    const int jx0 = std::max(0, static_cast<int>(std::floor(x0 / ds)));
    const int jx1 = std::min(mask.width, static_cast<int>(std::ceil(x1 / ds)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0 / ds)));
    const int iy1 = std::min(mask.height, static_cast<int>(std::ceil(y1 / ds)));
    if (jx0 >= jx1 || iy0 >= iy1) {
        return 0.0;
    }

    std::vector<double> wx(static_cast<std::size_t>(jx1 - jx0));
    for (int j = jx0; j < jx1; ++j) {
        wx[j - jx0] = std::max(0.0, std::min(x1, (j + 1) * ds) - std::max(x0, j * ds));
    }
    double row_total = 0.0;
    for (const double w : wx) {
        row_total += w;
    }

    // total and tissue accumulate in the same order, so a fully covered
    // footprint yields exactly 1.0
    double total = 0.0;
    double tissue = 0.0;
    for (int i = iy0; i < iy1; ++i) {
        const double wy = std::max(0.0, std::min(y1, (i + 1) * ds) - std::max(y0, i * ds));
        double row_tissue = 0.0;
        for (int j = jx0; j < jx1; ++j) {
            row_tissue += mask.at(j, i) ? wx[j - jx0] : 0.0;
        }
        total += wy * row_total;
        tissue += wy * row_tissue;
    }
    return total > 0.0 ? tissue / total : 0.0;
}

TileGrid enumerate_tiles(const TissueMask& mask, const SlideGeometry& geom, const TilingOptions& options) {
    geom.validate();
    if (!(options.min_tissue_frac >= 0.0 && options.min_tissue_frac <= 1.0)) {
        fail(ErrorCode::InvalidInput, "min_tissue_frac must lie in [0, 1]");
    }
    if (options.tile_px <= 0 || options.stride_px < 0) {
        fail(ErrorCode::InvalidInput, "tile and stride sizes must be positive");
    }
    if (options.target_mpp < geom.base_mpp * (1.0 - 1e-9)) {
        fail(ErrorCode::UnsupportedResolution,
             fmt::format("slide {}: target {} mpp finer than base {} mpp", geom.slide_id, options.target_mpp,
                         geom.base_mpp));
    }

    const int level = downscale_level(geom.base_mpp, options.target_mpp);
    const std::int64_t footprint = static_cast<std::int64_t>(options.tile_px) * level;
    const std::int64_t stride = static_cast<std::int64_t>(options.stride_px > 0 ? options.stride_px : options.tile_px) * level;

    TileGrid grid;
    grid.slide_id = geom.slide_id;
    grid.tile_px = options.tile_px;
    grid.target_mpp = geom.base_mpp * level;
    grid.stride_base_px = static_cast<std::uint32_t>(stride);

    for (std::int64_t y = 0; y + footprint <= geom.height_px; y += stride) {
        for (std::int64_t x = 0; x + footprint <= geom.width_px; x += stride) {
            const double frac = footprint_tissue_fraction(mask, static_cast<double>(x), static_cast<double>(y),
                                                          static_cast<double>(x + footprint),
                                                          static_cast<double>(y + footprint));
            if (frac >= options.min_tissue_frac && frac > 0.0) {
                grid.tiles.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)});
                grid.tissue_frac.push_back(frac);
            }
        }
    }
    return grid;
}

SlideGeometry read_geometry_json(const std::filesystem::path& path) {
    SlideGeometry geom;
    try {
        const auto doc = nlohmann::json::parse(read_text(path));
        geom.slide_id = doc.at("slide_id").get<std::string>();
        geom.width_px = doc.at("width_px").get<std::int64_t>();
        geom.height_px = doc.at("height_px").get<std::int64_t>();
        geom.base_mpp = doc.at("base_mpp").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, path.string() + ": " + e.what());
    }
    geom.validate();
    return geom;
}

std::string tile_grid_csv(const TileGrid& grid) {
    csv::check_field(grid.slide_id);
    std::string out = "slide_id,x,y,tile_px,target_mpp,tissue_frac\n";
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        out += fmt::format("{},{},{},{},{},{}\n", grid.slide_id, grid.tiles[i].x, grid.tiles[i].y, grid.tile_px,
                           grid.target_mpp, grid.tissue_frac[i]);
    }
    return out;
}

void write_tile_grid_csv(const std::filesystem::path& path, const TileGrid& grid) {
    write_text_atomic(path, tile_grid_csv(grid));
}

TileGrid read_tile_grid_csv(const std::filesystem::path& path) {
    const auto table = csv::read_file(path);
    const auto c_slide = table.require_column("slide_id");
    const auto c_x = table.require_column("x");
    const auto c_y = table.require_column("y");
    const auto c_tile = table.require_column("tile_px");
    const auto c_mpp = table.require_column("target_mpp");
    const auto c_frac = table.require_column("tissue_frac");

    TileGrid grid;
    grid.slide_id = path.stem().string();
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    try {
        for (const auto& row : table.rows) {
            grid.slide_id = row[c_slide];
            grid.tile_px = std::stoi(row[c_tile]);
            grid.target_mpp = std::stod(row[c_mpp]);
            const TileCoord coord{static_cast<std::uint32_t>(std::stoul(row[c_x])),
                                  static_cast<std::uint32_t>(std::stoul(row[c_y]))};
            if (!seen.insert({coord.x, coord.y}).second) {
                fail(ErrorCode::InvalidData, path.string() + ": duplicate tile coordinate");
            }
            grid.tiles.push_back(coord);
            grid.tissue_frac.push_back(std::stod(row[c_frac]));
        }
    } catch (const std::logic_error& e) {
        fail(ErrorCode::FormatError, path.string() + ": " + e.what());
    }
    grid.stride_base_px = static_cast<std::uint32_t>(grid.tile_px);
    return grid;
}

void write_mask_png(const std::filesystem::path& path, const TissueMask& mask) {
    std::vector<std::uint8_t> gray(mask.bits.size());
    for (std::size_t i = 0; i < gray.size(); ++i) {
        gray[i] = mask.bits[i] ? 255 : 0;
    }
    write_png_gray(path, mask.width, mask.height, gray);
}

} // namespace milbench

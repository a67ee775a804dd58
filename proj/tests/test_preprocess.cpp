#include <doctest.h>

#include <filesystem>
#include <random>

#include "milbench/error.hpp"
#include "milbench/preprocess.hpp"
#include "oracles.hpp"

using namespace milbench;

namespace {

TissueMask filled_mask(int w, int h, double downsample, bool value) {
    TissueMask m;
    m.width = w;
    m.height = h;
    m.downsample = downsample;
    m.bits.assign(static_cast<std::size_t>(w) * h, value ? 1 : 0);
    return m;
}

SlideGeometry geometry(std::int64_t w, std::int64_t h, double mpp) {
    return SlideGeometry{"s", w, h, mpp};
}

// Exact footprint fraction for an integer downsample: visit every base pixel.
double pixel_fraction(const TissueMask& mask, std::int64_t x0, std::int64_t y0, std::int64_t size) {
    const auto ds = static_cast<std::int64_t>(mask.downsample);
    std::int64_t on = 0;
    std::int64_t all = 0;
    for (std::int64_t y = y0; y < y0 + size; ++y) {
        for (std::int64_t x = x0; x < x0 + size; ++x) {
            const auto mx = x / ds;
            const auto my = y / ds;
            if (mx < mask.width && my < mask.height) {
                ++all;
                on += mask.at(static_cast<int>(mx), static_cast<int>(my)) ? 1 : 0;
            }
        }
    }
    return all == 0 ? 0.0 : static_cast<double>(on) / static_cast<double>(all);
}

} // namespace

TEST_CASE("blur leaves a constant image unchanged") {
    RgbImage img(7, 6, 128);
    CHECK(gaussian_blur5(img).pixels == img.pixels);
}

TEST_CASE("blur of a centred impulse") {
    RgbImage img(9, 9, 0);
    img.set(4, 4, 255, 255, 255);
    const auto out = gaussian_blur5(img);
    // 255 * 36 / 256 = 35.86
    CHECK(out.at(4, 4, 0) == 36);
    CHECK(out.at(4, 4, 2) == 36);
    CHECK(out.at(0, 0, 1) == 0);
    int total = 0;
    for (int y = 0; y < 9; ++y) {
        for (int x = 0; x < 9; ++x) total += out.at(x, y, 0);
    }
    // kernel sums to one; each of the 25 taps rounds by at most 0.5
    CHECK(std::abs(total - 255) <= 13);
}

TEST_CASE("blur of a single pixel is the pixel") {
    RgbImage img(1, 1);
    img.set(0, 0, 10, 200, 77);
    CHECK(gaussian_blur5(img).pixels == img.pixels);
}

TEST_CASE("otsu worked examples") {
    Histogram h{};
    h[50] = 100;
    h[200] = 100;
    CHECK(otsu_threshold(h) == 50);

    Histogram two{};
    two[0] = 1;
    two[255] = 1;
    CHECK(otsu_threshold(two) == 0);

    Histogram one{};
    one[7] = 42;
    CHECK_THROWS_AS(otsu_threshold(one), Error);
    try {
        otsu_threshold(one);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateHistogram);
    }
}

TEST_CASE("otsu matches the exact brute-force scan") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 2000; ++trial) {
        Histogram h{};
        const int occupied = 2 + static_cast<int>(gen() % 30);
        const std::uint64_t scale = trial % 3 == 0 ? 1'000'000'000ULL : 1000ULL;
        int distinct = 0;
        for (int k = 0; k < occupied; ++k) {
            const int bin = static_cast<int>(gen() % 256);
            if (h[bin] == 0) ++distinct;
            h[bin] += 1 + gen() % scale;
        }
        if (distinct < 2) continue;
        REQUIRE(otsu_threshold(h) == oracle::otsu(h));
    }
}

TEST_CASE("hsv pen classification") {
    const auto hsv = rgb_to_hsv(0, 0, 255);
    CHECK(hsv.hue == doctest::Approx(240.0));
    CHECK(hsv.sat == 1.0);

    auto single = [](std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        RgbImage img(1, 1);
        img.set(0, 0, r, g, b);
        return pen_mask(img)[0] != 0;
    };
    CHECK(single(0, 0, 255));
    CHECK_FALSE(single(255, 255, 255));
    CHECK_FALSE(single(128, 128, 128));
    CHECK(single(0, 200, 0));
    CHECK(single(10, 10, 10));
}

TEST_CASE("half dark, half white thumbnail") {
    RgbImage img(40, 20, 255);
    for (int y = 0; y < 20; ++y) {
        for (int x = 0; x < 20; ++x) img.set(x, y, 0, 0, 0);
    }
    // pure black is a black-pen colour under the defaults, so disable pens
    const auto mask = build_tissue_mask({img, 1.0}, PenRanges{});
    for (int y = 0; y < 20; ++y) {
        for (int x = 0; x < 40; ++x) REQUIRE(mask.at(x, y) == (x < 20));
    }
    CHECK(mask.tissue_fraction == 0.5);

    // dark grey tissue sits above the black-pen value cap, so defaults apply
    RgbImage grey(40, 20, 255);
    for (int y = 0; y < 20; ++y) {
        for (int x = 0; x < 20; ++x) grey.set(x, y, 60, 60, 60);
    }
    const auto m2 = build_tissue_mask({grey, 1.0});
    for (int y = 0; y < 20; ++y) {
        for (int x = 0; x < 40; ++x) REQUIRE(m2.at(x, y) == (x < 20));
    }
}

TEST_CASE("all-white thumbnail is degenerate") {
    const auto mask = build_tissue_mask({RgbImage(16, 16, 255), 1.0});
    CHECK(mask.degenerate);
    CHECK(mask.tissue_fraction == 0.0);
    for (auto b : mask.bits) CHECK(b == 0);
}

TEST_CASE("blue pen removes tissue") {
    RgbImage img(40, 20, 255);
    for (int y = 0; y < 20; ++y) {
        for (int x = 0; x < 20; ++x) img.set(x, y, 90, 40, 120);
    }
    for (int y = 5; y < 10; ++y) {
        for (int x = 0; x < 20; ++x) img.set(x, y, 0, 0, 255);
    }
    const auto mask = build_tissue_mask({img, 1.0});
    for (int y = 5; y < 10; ++y) {
        for (int x = 0; x < 20; ++x) REQUIRE_FALSE(mask.at(x, y));
    }
    CHECK(mask.at(3, 15));
}

TEST_CASE("tissue and pen never overlap") {
    std::mt19937 gen(5);
    for (int trial = 0; trial < 50; ++trial) {
        RgbImage img(24, 17);
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen() % 256);
        const auto mask = build_tissue_mask({img, 1.0});
        const auto pens = pen_mask(img);
        for (std::size_t i = 0; i < pens.size(); ++i) REQUIRE_FALSE((mask.bits[i] && pens[i]));
    }
}

TEST_CASE("mask building is deterministic") {
    std::mt19937 gen(9);
    RgbImage img(31, 29);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen() % 256);
    const auto a = build_tissue_mask({img, 4.0});
    const auto b = build_tissue_mask({img, 4.0});
    CHECK(a.bits == b.bits);
    CHECK(a.tissue_fraction == b.tissue_fraction);
}

TEST_CASE("tiling worked examples") {
    const auto geom = geometry(4480, 4480, 0.5);
    TilingOptions opts;
    const auto full = enumerate_tiles(filled_mask(280, 280, 16.0, true), geom, opts);
    CHECK(full.size() == 400);
    CHECK(full.tiles.front() == TileCoord{0, 0});
    CHECK(full.tiles.back() == TileCoord{4256, 4256});
    for (double f : full.tissue_frac) REQUIRE(f == 1.0);

    CHECK(enumerate_tiles(filled_mask(280, 280, 16.0, false), geom, opts).size() == 0);

    auto corner = filled_mask(280, 280, 16.0, false);
    for (int y = 0; y < 14; ++y) {
        for (int x = 0; x < 14; ++x) corner.bits[static_cast<std::size_t>(y) * 280 + x] = 1;
    }
    opts.min_tissue_frac = 0.5;
    const auto one = enumerate_tiles(corner, geom, opts);
    REQUIRE(one.size() == 1);
    CHECK(one.tiles[0] == TileCoord{0, 0});
}

TEST_CASE("downscale level and resolution checks") {
    CHECK(downscale_level(0.25, 0.5) == 2);
    CHECK(downscale_level(0.5, 0.5) == 1);
    CHECK(downscale_level(0.26, 0.5) == 2);
    const auto grid = enumerate_tiles(filled_mask(140, 140, 32.0, true), geometry(4480, 4480, 0.25), TilingOptions{});
    CHECK(grid.size() == 100);
    CHECK(grid.stride_base_px == 448);
    CHECK(grid.target_mpp == 0.5);
    CHECK_THROWS_AS(enumerate_tiles(filled_mask(10, 10, 1.0, true), geometry(10, 10, 1.0), TilingOptions{}), Error);
}

TEST_CASE("tile count bound and independent tissue fractions") {
    std::mt19937 gen(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int ds = 8 + static_cast<int>(gen() % 3) * 8;
        const int w = 20 + static_cast<int>(gen() % 40);
        const int h = 20 + static_cast<int>(gen() % 40);
        auto mask = filled_mask(w, h, ds, false);
        for (auto& b : mask.bits) b = gen() % 3 == 0 ? 1 : 0;
        const auto geom = geometry(static_cast<std::int64_t>(w) * ds, static_cast<std::int64_t>(h) * ds, 0.5);
        TilingOptions opts;
        opts.tile_px = 32 + static_cast<int>(gen() % 3) * 16;
        opts.min_tissue_frac = 0.3;
        const auto grid = enumerate_tiles(mask, geom, opts);
        CHECK(grid.size() <= static_cast<std::size_t>((geom.width_px / opts.tile_px) * (geom.height_px / opts.tile_px)));
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double exact = pixel_fraction(mask, grid.tiles[i].x, grid.tiles[i].y, opts.tile_px);
            REQUIRE(grid.tissue_frac[i] == doctest::Approx(exact).epsilon(1e-12));
            REQUIRE(exact >= opts.min_tissue_frac);
        }
    }
}

TEST_CASE("pen-covered regions yield no tiles at full coverage") {
    // 4480 x 4480 slide, thumbnail at downsample 16: left half dark tissue,
    // its top 10 mask rows overwritten by blue pen, right half background
    RgbImage img(280, 280, 255);
    for (int y = 0; y < 280; ++y) {
        for (int x = 0; x < 140; ++x) img.set(x, y, y < 140 ? 0 : 90, y < 140 ? 0 : 40, y < 140 ? 255 : 120);
    }
    const auto mask = build_tissue_mask({img, 16.0});
    TilingOptions opts;
    opts.min_tissue_frac = 1.0;
    const auto grid = enumerate_tiles(mask, geometry(4480, 4480, 0.5), opts);
    REQUIRE(grid.size() > 0);
    for (const auto& t : grid.tiles) {
        // any tile touching the pen block (base y < 2240) or background is dropped
        CHECK(t.y >= 2240);
        CHECK(t.x + 224 <= 2240);
    }
}

TEST_CASE("tile grid csv round trip") {
    auto grid = enumerate_tiles(filled_mask(28, 28, 16.0, true), geometry(448, 448, 0.5), TilingOptions{});
    grid.slide_id = "slide-1";
    const auto dir = std::filesystem::temp_directory_path() / "milbench_test_grid";
    write_tile_grid_csv(dir / "g.csv", grid);
    const auto back = read_tile_grid_csv(dir / "g.csv");
    CHECK(back.slide_id == grid.slide_id);
    CHECK(back.tiles == grid.tiles);
    CHECK(back.tissue_frac == grid.tissue_frac);
    CHECK(tile_grid_csv(back) == tile_grid_csv(grid));
    std::filesystem::remove_all(dir);
}

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>

#include "milbench/error.hpp"
#include "milbench/featstore.hpp"
#include "milbench/io.hpp"

using namespace milbench;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidInput;
}

FeatureMatrix random_matrix(std::mt19937& gen, std::uint64_t rows, std::uint32_t dim, bool coords) {
    FeatureMatrix m;
    m.slide_id = "slide_" + std::to_string(gen() % 1000);
    m.encoder_id = "enc";
    m.dim = dim;
    m.rows = rows;
    std::normal_distribution<float> normal;
    for (std::uint64_t i = 0; i < rows * dim; ++i) m.data.push_back(normal(gen));
    m.with_coords = coords;
    if (coords) {
        for (std::uint64_t i = 0; i < rows; ++i) m.coords.push_back({static_cast<std::uint32_t>(i * 224), 7});
    }
    return m;
}

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / "milbench_test_feat" / name; }

} // namespace

TEST_CASE("empty matrix is a bare 64-byte header") {
    FeatureMatrix m;
    m.slide_id = "s";
    m.encoder_id = "e";
    m.dim = 1024;
    const auto bytes = encode_features(m);
    CHECK(bytes.size() == 64);
    CHECK(decode_features(bytes) == m);
}

TEST_CASE("payload is row-major float32") {
    FeatureMatrix m;
    m.slide_id = "s";
    m.encoder_id = "e";
    m.dim = 3;
    m.rows = 2;
    m.data = {1, 2, 3, 4, 5, 6};
    const auto bytes = encode_features(m);
    REQUIRE(bytes.size() == 64 + 24);
    float back[6];
    std::memcpy(back, bytes.data() + 64, 24);
    for (int i = 0; i < 6; ++i) CHECK(back[i] == static_cast<float>(i + 1));
}

TEST_CASE("write/read round trip is bit exact") {
    std::mt19937 gen(1);
    for (int trial = 0; trial < 30; ++trial) {
        const std::uint64_t rows = trial % 5 == 0 ? 0 : gen() % 40;
        const std::uint32_t dim = trial % 3 == 0 ? 1 : 1 + gen() % 64;
        const auto m = random_matrix(gen, rows, dim, trial % 2 == 0);
        const auto path = scratch("rt.milf");
        write_features(m, path);
        const auto back = read_features(path);
        REQUIRE(back == m);
        REQUIRE(encode_features(back) == read_text(path));
    }
    fs::remove_all(scratch(""));
}

TEST_CASE("golden file parses to the reference matrix") {
    const auto path = fs::path(MILBENCH_TEST_DATA) / "golden_v1.milf";
    const auto m = read_features(path);
    CHECK(m.slide_id == "golden");
    CHECK(m.encoder_id == "ref");
    CHECK(m.dim == 3);
    CHECK(m.rows == 2);
    CHECK(m.data == std::vector<float>{1.5F, -2.0F, 0.25F, 3.0F, 0.0F, -0.125F});
    REQUIRE(m.with_coords);
    CHECK(m.coords == std::vector<TileCoord>{{0, 0}, {224, 0}});
    CHECK(encode_features(m) == read_text(path));
}

TEST_CASE("reader errors") {
    std::mt19937 gen(2);
    const auto m = random_matrix(gen, 3, 4, false);
    const auto good = encode_features(m);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(code_of([&] { decode_features(bad_magic); }) == ErrorCode::FormatError);

    auto bad_version = good;
    bad_version[4] = 9;
    CHECK(code_of([&] { decode_features(bad_version); }) == ErrorCode::FormatError);

    const auto short_by_one = good.substr(0, good.size() - 1);
    CHECK(code_of([&] { decode_features(short_by_one); }) == ErrorCode::CorruptFile);
    CHECK(code_of([&] { decode_features(good + "x"); }) == ErrorCode::CorruptFile);
    CHECK(code_of([&] { decode_features(good.substr(0, 10)); }) == ErrorCode::CorruptFile);

    auto nan = good;
    const float q = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan.data() + 64, &q, 4);
    CHECK(code_of([&] { decode_features(nan); }) == ErrorCode::InvalidData);

    CHECK(code_of([&] { read_features(scratch("missing.milf")); }) == ErrorCode::StorageError);
}

TEST_CASE("writer validates the matrix") {
    FeatureMatrix m;
    m.slide_id = "s";
    m.encoder_id = "e";
    m.dim = 2;
    m.rows = 2;
    m.data = {1, 2, 3, std::numeric_limits<float>::infinity()};
    CHECK(code_of([&] { encode_features(m); }) == ErrorCode::InvalidData);
    m.data[3] = 4;
    m.with_coords = true;
    m.coords = {{0, 0}, {0, 0}};
    CHECK(code_of([&] { encode_features(m); }) == ErrorCode::InvalidData);
}

TEST_CASE("mock encoder") {
    TileGrid grid;
    grid.slide_id = "slide";
    for (std::uint32_t i = 0; i < 50; ++i) grid.tiles.push_back({i * 224, (i % 7) * 224});
    grid.tissue_frac.assign(grid.tiles.size(), 1.0);

    const auto a = mock_encode(grid, 64, 1);
    CHECK(a == mock_encode(grid, 64, 1));
    CHECK(a.coords == grid.tiles);
    const auto b = mock_encode(grid, 64, 2);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        differ += a.data[i] != b.data[i] ? 1 : 0;
        REQUIRE(a.data[i] >= -1.0F);
        REQUIRE(a.data[i] <= 1.0F);
    }
    CHECK(static_cast<double>(differ) >= 0.99 * static_cast<double>(a.data.size()));

    TileGrid empty;
    empty.slide_id = "e";
    const auto z = mock_encode(empty, 8, 1);
    CHECK(z.rows == 0);
    CHECK(z.data.empty());
}

#include "milbench/featstore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "milbench/error.hpp"
#include "milbench/io.hpp"
#include "milbench/rng.hpp"

namespace milbench {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

namespace {

constexpr std::size_t kFixedHeader = 4 + 2 + 2 + 4 + 8;
constexpr std::size_t kAlign = 64;

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos, const std::string& origin) {
    if (pos + sizeof(T) > in.size()) {
        fail(ErrorCode::CorruptFile, origin + ": header truncated");
    }
    T value;
    std::memcpy(&value, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

void put_string(std::string& out, const std::string& s) {
    if (s.size() > 0xFFFF) {
        fail(ErrorCode::InvalidInput, "identifier longer than 65535 bytes");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
    out += s;
}

std::string get_string(const std::string& in, std::size_t& pos, const std::string& origin) {
    const auto len = get<std::uint16_t>(in, pos, origin);
    if (pos + len > in.size()) {
        fail(ErrorCode::CorruptFile, origin + ": header truncated");
    }
    std::string s = in.substr(pos, len);
    pos += len;
    return s;
}

} // namespace

void FeatureMatrix::validate() const {
    if (dim == 0) {
        fail(ErrorCode::ShapeError, "feature dim must be positive");
    }
    if (data.size() != rows * dim) {
        fail(ErrorCode::ShapeError, "feature payload does not match rows x dim");
    }
    for (const float v : data) {
        if (!std::isfinite(v)) {
            fail(ErrorCode::InvalidData, "non-finite feature value in slide " + slide_id);
        }
    }
    if (with_coords) {
        if (coords.size() != rows) {
            fail(ErrorCode::ShapeError, "coordinate count does not match rows");
        }
        std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
        for (const auto& c : coords) {
            if (!seen.insert({c.x, c.y}).second) {
                fail(ErrorCode::InvalidData, "duplicate tile coordinate in slide " + slide_id);
            }
        }
    } else if (!coords.empty()) {
        fail(ErrorCode::ShapeError, "coordinates present but flag unset");
    }
}

std::size_t feature_header_size(const std::string& slide_id, const std::string& encoder_id) {
    const std::size_t raw = kFixedHeader + 2 + slide_id.size() + 2 + encoder_id.size();
    return (raw + kAlign - 1) / kAlign * kAlign;
}

std::string encode_features(const FeatureMatrix& m) {
    m.validate();
    std::string out;
    out.reserve(feature_header_size(m.slide_id, m.encoder_id) + m.data.size() * 4 + m.coords.size() * 8);
    out.append(kFeatureMagic, 4);
    put<std::uint16_t>(out, kFeatureVersion);
    put<std::uint16_t>(out, m.with_coords ? 1 : 0);
    put<std::uint32_t>(out, m.dim);
    put<std::uint64_t>(out, m.rows);
    put_string(out, m.slide_id);
    put_string(out, m.encoder_id);
    out.resize(feature_header_size(m.slide_id, m.encoder_id), '\0');
    out.append(reinterpret_cast<const char*>(m.data.data()), m.data.size() * sizeof(float));
    for (const auto& c : m.coords) {
        put<std::uint32_t>(out, c.x);
        put<std::uint32_t>(out, c.y);
    }
    return out;
}

FeatureMatrix decode_features(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
        fail(ErrorCode::FormatError, origin + ": bad magic");
    }
    std::size_t pos = 4;
    const auto version = get<std::uint16_t>(bytes, pos, origin);
    if (version != kFeatureVersion) {
        fail(ErrorCode::FormatError, origin + ": unsupported version " + std::to_string(version));
    }
    const auto flags = get<std::uint16_t>(bytes, pos, origin);
    FeatureMatrix m;
    m.with_coords = (flags & 1U) != 0;
    m.dim = get<std::uint32_t>(bytes, pos, origin);
    m.rows = get<std::uint64_t>(bytes, pos, origin);
    m.slide_id = get_string(bytes, pos, origin);
    m.encoder_id = get_string(bytes, pos, origin);
    if (m.dim == 0) {
        fail(ErrorCode::FormatError, origin + ": zero dim");
    }

    const std::size_t header = feature_header_size(m.slide_id, m.encoder_id);
    const std::uint64_t row_bytes = static_cast<std::uint64_t>(m.dim) * 4 + (m.with_coords ? 8 : 0);
    const std::uint64_t available = bytes.size() > header ? bytes.size() - header : 0;
    if (bytes.size() < header || m.rows > available / row_bytes || m.rows * row_bytes != available) {
        fail(ErrorCode::CorruptFile, origin + ": payload length does not match " + std::to_string(m.rows) +
                                         " rows of dim " + std::to_string(m.dim));
    }
    const std::uint64_t payload = m.rows * m.dim * 4;

    m.data.resize(m.rows * m.dim);
    std::memcpy(m.data.data(), bytes.data() + header, payload);
    if (m.with_coords) {
        m.coords.resize(m.rows);
        std::size_t cpos = header + payload;
        for (auto& c : m.coords) {
            c.x = get<std::uint32_t>(bytes, cpos, origin);
            c.y = get<std::uint32_t>(bytes, cpos, origin);
        }
    }
    m.validate();
    return m;
}

void write_features(const FeatureMatrix& m, const std::filesystem::path& path) {
    write_text_atomic(path, encode_features(m));
}

FeatureMatrix read_features(const std::filesystem::path& path) {
    return decode_features(read_text(path), path.string());
}

FeatureMatrix mock_encode(const TileGrid& grid, std::uint32_t dim, std::uint64_t seed, const std::string& encoder_id) {
    if (dim == 0) {
        fail(ErrorCode::InvalidInput, "mock_encode: dim must be positive");
    }
    FeatureMatrix m;
    m.slide_id = grid.slide_id;
    m.encoder_id = encoder_id;
    m.dim = dim;
    m.rows = grid.tiles.size();
    m.with_coords = true;
    m.coords = grid.tiles;
    m.data.resize(m.rows * dim);

    const std::uint64_t slide_key = hash_combine(hash_combine(fnv1a64(grid.slide_id), seed), dim);
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
        const std::uint64_t tile_key =
            hash_combine(slide_key, (static_cast<std::uint64_t>(grid.tiles[i].x) << 32) | grid.tiles[i].y);
        for (std::uint32_t k = 0; k < dim; ++k) {
            const std::uint64_t bits = splitmix64(tile_key + k);
            // 24 random bits map exactly onto float32 in [-1, 1]
            const auto u = static_cast<std::int32_t>(bits >> 40);
            m.data[i * dim + k] = static_cast<float>(u) / 8388607.5F - 1.0F;
        }
    }
    return m;
}

} // namespace milbench

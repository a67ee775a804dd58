#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "milbench/preprocess.hpp"

namespace milbench {

/// n x d float32 tile embeddings for one slide, row-major.
struct FeatureMatrix {
    std::string slide_id;
    std::string encoder_id;
    std::uint32_t dim = 0;
    std::uint64_t rows = 0;
    std::vector<float> data;
    /// When set, `coords` holds one unique coordinate per row; otherwise it is empty.
    bool with_coords = false;
    std::vector<TileCoord> coords;

    const float* row(std::uint64_t i) const { return data.data() + i * dim; }

    /// Throws Error{InvalidData} / Error{ShapeError} on invariant violations.
    void validate() const;

    friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

inline constexpr char kFeatureMagic[4] = {'M', 'I', 'L', 'F'};
inline constexpr std::uint16_t kFeatureVersion = 1;

/// Bytes of the padded header for the given identifiers.
std::size_t feature_header_size(const std::string& slide_id, const std::string& encoder_id);

std::string encode_features(const FeatureMatrix& m);

FeatureMatrix decode_features(const std::string& bytes, const std::string& origin = "<memory>");

/// Throws Error{StorageError} on I/O failure.
void write_features(const FeatureMatrix& m, const std::filesystem::path& path);

/// Throws FormatError (magic/version), CorruptFile (length), InvalidData (NaN/Inf).
FeatureMatrix read_features(const std::filesystem::path& path);

/// Deterministic stand-in encoder: entry (tile, k) is a pure function of
/// (slide_id, x, y, seed, dim, k), uniform in [-1, 1].
FeatureMatrix mock_encode(const TileGrid& grid, std::uint32_t dim, std::uint64_t seed,
                          const std::string& encoder_id = "mock");

} // namespace milbench

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "milbench/featstore.hpp"
#include "milbench/gma.hpp"
#include "milbench/manifest.hpp"
#include "milbench/tileprobe.hpp"

namespace milbench {

enum class SynthKind { MilBinary, MilMulticlass, Regression, TileLevel };

/// Desk-scale stand-in for a real cohort. Tiles are isotropic Gaussian
/// noise; signal tiles are shifted by a fixed vector of norm 4 * noise_sigma.
struct SynthSpec {
    SynthKind kind = SynthKind::MilBinary;
    int classes = 2;
    int n_slides = 400;
    int min_tiles = 40;
    int max_tiles = 60;
    std::uint32_t dim = 32;
    double signal_fraction = 0.05;
    double noise_sigma = 1.0;
    /// Consecutive slides share a patient id; 0 leaves patient ids empty.
    int slides_per_patient = 2;
    std::uint64_t seed = 7;
    std::string label_column = "label";

    void validate() const;
};

struct SynthDataset {
    SynthSpec spec;
    SlideManifest manifest;
    std::vector<FeatureMatrix> features;
    /// Per slide, which rows carry signal.
    std::vector<std::vector<bool>> signal_rows;
    /// Unit signal directions, one per class (or one for binary/regression).
    std::vector<std::vector<double>> directions;
    /// Tile-level kind only.
    TileLabelMap tile_labels;
};

SynthDataset gen_mil_dataset(const SynthSpec& spec, const std::string& encoder_id = "synth");

/// Writes `manifest.csv`, `features/<encoder>/<slide>.milf`, and for the
/// tile-level kind `<label_column>.csv` into `dir`.
void write_synth_dataset(const SynthDataset& data, const std::filesystem::path& dir);

enum class OraclePooling {
    /// Mean projection over every tile of the slide.
    SlideMean,
    /// Mean of the ceil(signal_fraction * n) largest projections.
    TopSignal,
};

/// AUC of a fixed linear probe along the known binary signal direction,
/// applied to pooled tile projections. No training involved.
double oracle_probe_auc(const SynthDataset& data, OraclePooling pooling);

} // namespace milbench

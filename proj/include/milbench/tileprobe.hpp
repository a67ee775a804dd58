#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "milbench/featstore.hpp"
#include "milbench/gma.hpp"
#include "milbench/optim.hpp"

namespace milbench {

/// Multinomial logistic regression on single tile embeddings.
struct ProbeParams {
    RowMatrix weight; // k x d
    Eigen::VectorXd bias; // k

    static ProbeParams zeros(int input_dim, int classes);

    int classes() const { return static_cast<int>(weight.rows()); }
    int input_dim() const { return static_cast<int>(weight.cols()); }

    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;
};

struct LabeledTiles {
    RowMatrix features; // n x d
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

struct ProbeOptions {
    int epochs = 50;
    int batch_size = 128;
    double warmup_frac = 0.1;
    OptimHyper optim{};
};

struct ProbeResult {
    ProbeParams params;
    double val_macro_auc = 0.0;
    std::vector<int> skipped_classes;
};

/// Row-wise softmax probabilities, n x k.
Eigen::MatrixXd probe_predict(const ProbeParams& p, const RowMatrix& features);

/// Mean softmax cross-entropy over the selected rows; fills `grads` when non-null.
double probe_loss_and_grad(const ProbeParams& p, const LabeledTiles& tiles, std::span<const std::size_t> rows,
                           ProbeParams* grads);

/// Zero-initialised probe trained with AdamW under the warmup-cosine schedule
/// on shuffled minibatches. No class rebalancing. Throws
/// Error{InfeasibleTask} if a class in [0, classes) is missing from train.
ProbeResult probe_train(const LabeledTiles& train, const LabeledTiles& val, int classes, std::uint64_t seed,
                        const ProbeOptions& options = {});

struct RegionCell {
    TileCoord coord;
    int pred_class = 0;
    double prob = 0.0;
};

/// Argmax class per tile (lowest index wins ties) with its probability.
/// Throws Error{ShapeError} if the features do not line up with the grid.
std::vector<RegionCell> region_map(const ProbeParams& p, const TileGrid& grid, const FeatureMatrix& features);

std::string region_map_csv(const std::string& slide_id, const std::vector<RegionCell>& cells);

/// Per-slide tile labels keyed by coordinate: `slide_id,x,y,label`.
using TileLabelMap = std::map<std::string, std::map<std::pair<std::uint32_t, std::uint32_t>, int>>;

TileLabelMap read_tile_labels(const std::filesystem::path& path);
std::string tile_labels_csv(const TileLabelMap& labels);

/// Stacks the labelled rows of the given slides (matched on coordinates, in
/// file row order). Rows without a label are skipped.
LabeledTiles gather_labeled_tiles(const std::vector<const FeatureMatrix*>& slides, const TileLabelMap& labels);

// "PRBP" sidecar with the same header layout as GMAP: dim, classes, then W, b as float64.
void write_probe_params(const ProbeParams& p, const std::filesystem::path& path);
ProbeParams read_probe_params(const std::filesystem::path& path);

} // namespace milbench

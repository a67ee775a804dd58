#include "milbench/tileprobe.hpp"

#include <cmath>
#include <cstring>
#include <utility>

#include <fmt/format.h>

#include "milbench/csv.hpp"
#include "milbench/error.hpp"
#include "milbench/io.hpp"
#include "milbench/metrics.hpp"
#include "milbench/rng.hpp"

namespace milbench {

ProbeParams ProbeParams::zeros(int input_dim, int classes) {
    if (input_dim <= 0 || classes < 2) {
        fail(ErrorCode::ShapeError, "probe needs positive dim and at least two classes");
    }
    return {RowMatrix::Zero(classes, input_dim), Eigen::VectorXd::Zero(classes)};
}

std::vector<std::span<double>> ProbeParams::tensors() {
    return {{weight.data(), static_cast<std::size_t>(weight.size())},
            {bias.data(), static_cast<std::size_t>(bias.size())}};
}

std::vector<std::span<const double>> ProbeParams::tensors() const {
    return {{weight.data(), static_cast<std::size_t>(weight.size())},
            {bias.data(), static_cast<std::size_t>(bias.size())}};
}

Eigen::MatrixXd probe_predict(const ProbeParams& p, const RowMatrix& features) {
    if (features.cols() != p.input_dim()) {
        fail(ErrorCode::ShapeError, "probe feature dim mismatch");
    }
    Eigen::MatrixXd logits = features * p.weight.transpose();
    logits.rowwise() += p.bias.transpose();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double top = logits.row(r).maxCoeff();
        logits.row(r) = (logits.row(r).array() - top).exp();
        logits.row(r) /= logits.row(r).sum();
    }
    return logits;
}

double probe_loss_and_grad(const ProbeParams& p, const LabeledTiles& tiles, std::span<const std::size_t> rows,
                           ProbeParams* grads) {
    if (rows.empty()) {
        fail(ErrorCode::InvalidInput, "probe batch is empty");
    }
    const int k = p.classes();
    if (grads) {
        *grads = ProbeParams::zeros(p.input_dim(), k);
    }
    double loss = 0.0;
    Eigen::VectorXd logits(k);
    for (const std::size_t r : rows) {
        const auto x = tiles.features.row(static_cast<Eigen::Index>(r));
        const int y = tiles.labels[r];
        if (y < 0 || y >= k) {
            fail(ErrorCode::InvalidInput, "tile label outside class range");
        }
        logits = p.weight * x.transpose() + p.bias;
        const double top = logits.maxCoeff();
        const double log_norm = top + std::log((logits.array() - top).exp().sum());
        loss += log_norm - logits(y);
        if (grads) {
            Eigen::VectorXd delta = (logits.array() - log_norm).exp();
            delta(y) -= 1.0;
            grads->weight.noalias() += delta * x;
            grads->bias += delta;
        }
    }
    const double scale = 1.0 / static_cast<double>(rows.size());
    if (grads) {
        grads->weight *= scale;
        grads->bias *= scale;
    }
    return loss * scale;
}

ProbeResult probe_train(const LabeledTiles& train, const LabeledTiles& val, int classes, std::uint64_t seed,
                        const ProbeOptions& options) {
    if (train.size() == 0 || val.size() == 0) {
        fail(ErrorCode::InvalidInput, "probe_train needs nonempty train and validation tiles");
    }
    if (train.features.cols() != val.features.cols()) {
        fail(ErrorCode::ShapeError, "train and validation tiles disagree on dim");
    }
    std::vector<int> present(static_cast<std::size_t>(classes), 0);
    for (const int y : train.labels) {
        if (y < 0 || y >= classes) {
            fail(ErrorCode::InvalidInput, "tile label outside class range");
        }
        present[static_cast<std::size_t>(y)] = 1;
    }
    for (int c = 0; c < classes; ++c) {
        if (!present[static_cast<std::size_t>(c)]) {
            fail(ErrorCode::InfeasibleTask, fmt::format("class {} has no training tiles", c));
        }
    }

    const std::size_t batch = static_cast<std::size_t>(std::max(1, options.batch_size));
    const std::size_t batches_per_epoch = (train.size() + batch - 1) / batch;
    OptimHyper hyper = options.optim;
    hyper.total_steps = static_cast<std::int64_t>(options.epochs) * static_cast<std::int64_t>(batches_per_epoch);
    hyper.warmup_steps = std::llround(options.warmup_frac * static_cast<double>(hyper.total_steps));

    ProbeResult result;
    result.params = ProbeParams::zeros(static_cast<int>(train.features.cols()), classes);
    AdamW optimizer(hyper);
    Rng rng(hash_combine(seed, "probe-order"));
    std::vector<std::size_t> order(train.size());
    ProbeParams grads;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t len = std::min(batch, order.size() - start);
            const double loss = probe_loss_and_grad(result.params, train,
                                                    std::span<const std::size_t>(order.data() + start, len), &grads);
            if (!std::isfinite(loss)) {
                fail(ErrorCode::NumericalError, "non-finite probe loss");
            }
            optimizer.step(result.params.tensors(), std::as_const(grads).tensors());
        }
    }

    const auto auc = macro_ovr_auc(probe_predict(result.params, val.features), val.labels);
    result.val_macro_auc = auc.value;
    result.skipped_classes = auc.skipped_classes;
    return result;
}

std::vector<RegionCell> region_map(const ProbeParams& p, const TileGrid& grid, const FeatureMatrix& features) {
    if (features.rows != grid.tiles.size() || (features.rows > 0 && features.dim != static_cast<std::uint32_t>(p.input_dim()))) {
        fail(ErrorCode::ShapeError, "features do not align with the tile grid");
    }
    if (features.with_coords) {
        for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
            if (!(features.coords[i] == grid.tiles[i])) {
                fail(ErrorCode::ShapeError, "feature coordinates differ from grid order");
            }
        }
    }
    std::vector<RegionCell> cells;
    if (grid.tiles.empty()) {
        return cells;
    }
    RowMatrix x(static_cast<Eigen::Index>(features.rows), features.dim);
    for (std::size_t i = 0; i < features.data.size(); ++i) {
        x.data()[i] = features.data[i];
    }
    const Eigen::MatrixXd probs = probe_predict(p, x);
    cells.reserve(grid.tiles.size());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        int best = 0;
        for (int c = 1; c < probs.cols(); ++c) {
            if (probs(r, c) > probs(r, best)) {
                best = c;
            }
        }
        cells.push_back({grid.tiles[static_cast<std::size_t>(r)], best, probs(r, best)});
    }
    return cells;
}

std::string region_map_csv(const std::string& slide_id, const std::vector<RegionCell>& cells) {
    csv::check_field(slide_id);
    std::string out = "slide_id,x,y,pred_class,prob\n";
    for (const auto& c : cells) {
        out += fmt::format("{},{},{},{},{}\n", slide_id, c.coord.x, c.coord.y, c.pred_class, c.prob);
    }
    return out;
}

TileLabelMap read_tile_labels(const std::filesystem::path& path) {
    const auto table = csv::read_file(path);
    const auto c_slide = table.require_column("slide_id");
    const auto c_x = table.require_column("x");
    const auto c_y = table.require_column("y");
    const auto c_label = table.require_column("label");
    TileLabelMap labels;
    try {
        for (const auto& row : table.rows) {
            const std::pair<std::uint32_t, std::uint32_t> key{static_cast<std::uint32_t>(std::stoul(row[c_x])),
                                                              static_cast<std::uint32_t>(std::stoul(row[c_y]))};
            if (!labels[row[c_slide]].emplace(key, std::stoi(row[c_label])).second) {
                fail(ErrorCode::InvalidData, path.string() + ": duplicate tile label");
            }
        }
    } catch (const std::logic_error& e) {
        fail(ErrorCode::FormatError, path.string() + ": " + e.what());
    }
    return labels;
}

std::string tile_labels_csv(const TileLabelMap& labels) {
    std::string out = "slide_id,x,y,label\n";
    for (const auto& [slide, tiles] : labels) {
        csv::check_field(slide);
        for (const auto& [coord, label] : tiles) {
            out += fmt::format("{},{},{},{}\n", slide, coord.first, coord.second, label);
        }
    }
    return out;
}

LabeledTiles gather_labeled_tiles(const std::vector<const FeatureMatrix*>& slides, const TileLabelMap& labels) {
    std::vector<std::pair<const FeatureMatrix*, std::size_t>> picked;
    std::vector<int> ys;
    Eigen::Index dim = -1;
    for (const FeatureMatrix* m : slides) {
        if (!m->with_coords) {
            fail(ErrorCode::ShapeError, "tile-level tasks need feature files with coordinates: " + m->slide_id);
        }
        if (dim >= 0 && dim != static_cast<Eigen::Index>(m->dim)) {
            fail(ErrorCode::ShapeError, "slides disagree on feature dim");
        }
        dim = m->dim;
        const auto it = labels.find(m->slide_id);
        if (it == labels.end()) {
            continue;
        }
        for (std::size_t i = 0; i < m->rows; ++i) {
            const auto lab = it->second.find({m->coords[i].x, m->coords[i].y});
            if (lab != it->second.end()) {
                picked.emplace_back(m, i);
                ys.push_back(lab->second);
            }
        }
    }
    LabeledTiles tiles;
    tiles.features.resize(static_cast<Eigen::Index>(picked.size()), std::max<Eigen::Index>(dim, 0));
    for (std::size_t r = 0; r < picked.size(); ++r) {
        const float* src = picked[r].first->row(picked[r].second);
        for (Eigen::Index c = 0; c < dim; ++c) {
            tiles.features(static_cast<Eigen::Index>(r), c) = src[c];
        }
    }
    tiles.labels = std::move(ys);
    return tiles;
}

namespace {

constexpr char kProbeMagic[4] = {'P', 'R', 'B', 'P'};

} // namespace

void write_probe_params(const ProbeParams& p, const std::filesystem::path& path) {
    std::string out(kProbeMagic, 4);
    auto put32 = [&out](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
    const std::uint16_t version = 1;
    const std::uint16_t flags = 0;
    out.append(reinterpret_cast<const char*>(&version), 2);
    out.append(reinterpret_cast<const char*>(&flags), 2);
    put32(static_cast<std::uint32_t>(p.input_dim()));
    put32(static_cast<std::uint32_t>(p.classes()));
    out.resize(64, '\0');
    for (const auto& t : p.tensors()) {
        out.append(reinterpret_cast<const char*>(t.data()), t.size_bytes());
    }
    write_text_atomic(path, out);
}

ProbeParams read_probe_params(const std::filesystem::path& path) {
    const std::string bytes = read_text(path);
    if (bytes.size() < 64 || std::memcmp(bytes.data(), kProbeMagic, 4) != 0) {
        fail(ErrorCode::FormatError, path.string() + ": not a probe parameter file");
    }
    std::uint16_t version = 0;
    std::uint32_t dim = 0;
    std::uint32_t classes = 0;
    std::memcpy(&version, bytes.data() + 4, 2);
    std::memcpy(&dim, bytes.data() + 8, 4);
    std::memcpy(&classes, bytes.data() + 12, 4);
    if (version != 1 || dim == 0 || classes < 2 || dim > (1U << 20) || classes > (1U << 16)) {
        fail(ErrorCode::FormatError, path.string() + ": bad probe header");
    }
    ProbeParams p = ProbeParams::zeros(static_cast<int>(dim), static_cast<int>(classes));
    std::size_t pos = 64;
    std::size_t expected = 64;
    for (const auto& t : p.tensors()) {
        expected += t.size_bytes();
    }
    if (bytes.size() != expected) {
        fail(ErrorCode::CorruptFile, path.string() + ": payload length mismatch");
    }
    for (auto& t : p.tensors()) {
        std::memcpy(t.data(), bytes.data() + pos, t.size_bytes());
        pos += t.size_bytes();
    }
    return p;
}

} // namespace milbench

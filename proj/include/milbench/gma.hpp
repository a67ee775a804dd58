#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "milbench/featstore.hpp"
#include "milbench/metrics.hpp"
#include "milbench/optim.hpp"

namespace milbench {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class TaskKind { Classification, Regression };

/// One slide: n x d tile features (upcast to double) and its target.
/// Classification targets hold the class index.
struct Bag {
    RowMatrix features;
    double target = 0.0;

    int label() const { return static_cast<int>(target); }
};

/// Gated-attention pooling plus a linear head.
///   score_i = w . (tanh(V h_i) * sigmoid(U h_i)),  a = softmax(score)
///   z = sum_i a_i h_i,  output = W z + b
/// Float32 features upcast to a bag.
Bag to_bag(const FeatureMatrix& m, double target);

struct GmaParams {
    RowMatrix tanh_proj;   // V, h x d
    RowMatrix gate_proj;   // U, h x d
    Eigen::VectorXd attn_vec; // w, h
    RowMatrix head_weight; // c x d
    Eigen::VectorXd head_bias; // c

    static GmaParams zeros(int input_dim, int hidden, int outputs);

    int input_dim() const { return static_cast<int>(tanh_proj.cols()); }
    int hidden() const { return static_cast<int>(tanh_proj.rows()); }
    int outputs() const { return static_cast<int>(head_weight.rows()); }

    /// Fixed tensor order: V, U, w, W, b.
    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;

    /// Throws ShapeError on inconsistent shapes, NumericalError on non-finite entries.
    void validate() const;
};

struct GmaForward {
    Eigen::VectorXd attention;
    Eigen::VectorXd embedding;
    Eigen::VectorXd output;
};

/// Throws ShapeError on a feature-dim mismatch or an empty bag, InvalidData on non-finite features.
GmaForward gma_forward(const GmaParams& p, const Bag& bag);

struct LossAndGrad {
    double loss = 0.0;
    GmaParams grads;
    GmaForward forward;
};

/// Softmax cross-entropy (classification) or 0.5 (output - target)^2
/// (regression, one output) with exact gradients for every parameter.
LossAndGrad loss_and_grad(const GmaParams& p, const Bag& bag, TaskKind kind);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero head bias.
GmaParams init_gma(int input_dim, int hidden, int outputs, std::uint64_t seed);

struct TrainOptions {
    int hidden = 128;
    int epochs = 50;
    double warmup_frac = 0.1;
    OptimHyper optim{};
    /// Record per-epoch validation metrics (one extra forward pass over val).
    bool track_curve = true;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    /// NaN when undefined for this epoch's predictions.
    double val_metric = 0.0;
};

struct TrainResult {
    GmaParams params;
    /// AUC for classification, negative normalized RMSE for regression.
    double val_metric = 0.0;
    /// Regression only: validation RMSE in original target units.
    double val_rmse_original = 0.0;
    std::optional<TargetStats> target_stats;
    std::vector<EpochRecord> curve;
};

using BagRefs = std::vector<const Bag*>;

/// Batch-size-one AdamW training under a warmup-cosine schedule; the training
/// list is reshuffled each epoch by a generator seeded from `seed`. For
/// regression, targets are z-scored with training-list statistics.
/// `classes` is ignored for regression.
TrainResult train_slide_model(const BagRefs& train, const BagRefs& val, TaskKind kind, int classes,
                              std::uint64_t seed, const TrainOptions& options = {});

/// Validation metric for already-trained params; same definition as train_slide_model.
double evaluate_slide_model(const GmaParams& p, const BagRefs& val, TaskKind kind,
                            const std::optional<TargetStats>& stats, double* rmse_original = nullptr);

// "GMAP" sidecar: magic | version u16 | flags u16 | dim u32 | hidden u32 |
// outputs u32 | pad to 64 | V, U, w, W, b as float64 little-endian.
void write_gma_params(const GmaParams& p, const std::filesystem::path& path);
GmaParams read_gma_params(const std::filesystem::path& path);

void write_curve_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& curve);
std::string curve_csv(const std::vector<EpochRecord>& curve);

} // namespace milbench

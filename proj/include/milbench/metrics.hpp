#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace milbench {

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), via midranks.
/// Labels are 0/1. Throws Error{UndefinedMetric} if either class is absent.
double binary_auc(std::span<const double> scores, std::span<const int> labels);

struct MacroAuc {
    double value = 0.0;
    /// Classes with no positives (or only positives) in the labels.
    std::vector<int> skipped_classes;
};

/// Unweighted one-vs-rest AUC over classes; rows of `probs` must sum to 1
/// within 1e-6. Throws Error{UndefinedMetric} when fewer than two classes
/// are present in the labels.
MacroAuc macro_ovr_auc(const Eigen::MatrixXd& probs, std::span<const int> labels);

/// Training-split location and scale for z-scoring regression targets.
struct TargetStats {
    double mean = 0.0;
    double std = 1.0;

    /// Population standard deviation. Throws Error{InvalidData} if it is zero.
    static TargetStats from(std::span<const double> values);

    double normalize(double v) const noexcept { return (v - mean) / std; }
    double denormalize(double z) const noexcept { return z * std + mean; }
};

enum class RmseUnits { Normalized, Original };

/// Root mean squared error after z-scoring both sides by `stats`; Original
/// multiplies the result back by stats.std.
double rmse(std::span<const double> preds, std::span<const double> targets, const TargetStats& stats,
            RmseUnits units = RmseUnits::Normalized);

} // namespace milbench

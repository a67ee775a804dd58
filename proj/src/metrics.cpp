#include "milbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "milbench/error.hpp"

namespace milbench {

double binary_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        fail(ErrorCode::ShapeError, "binary_auc: scores and labels differ in length");
    }
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(scores[i])) {
            fail(ErrorCode::InvalidData, "binary_auc: non-finite score");
        }
        n_pos += labels[i] == 1 ? 1 : 0;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        fail(ErrorCode::UndefinedMetric, "binary_auc: both classes must be present");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // midranks are multiples of 0.5, so the rank sum is exact
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) {
            ++j;
        }
        const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos);
    const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(n_neg));
}

MacroAuc macro_ovr_auc(const Eigen::MatrixXd& probs, std::span<const int> labels) {
    const auto n = static_cast<std::size_t>(probs.rows());
    const int classes = static_cast<int>(probs.cols());
    if (n != labels.size() || n == 0) {
        fail(ErrorCode::ShapeError, "macro_ovr_auc: probability rows and labels differ");
    }
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        if (!probs.row(r).allFinite() || std::abs(probs.row(r).sum() - 1.0) > 1e-6) {
            fail(ErrorCode::InvalidData, "macro_ovr_auc: probability rows must sum to 1");
        }
    }

    MacroAuc result;
    double total = 0.0;
    int used = 0;
    std::vector<int> onehot(n);
    std::vector<double> column(n);
    for (int k = 0; k < classes; ++k) {
        std::size_t positives = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] < 0 || labels[i] >= classes) {
                fail(ErrorCode::InvalidData, "macro_ovr_auc: label outside class range");
            }
            onehot[i] = labels[i] == k ? 1 : 0;
            positives += onehot[i];
            column[i] = probs(static_cast<Eigen::Index>(i), k);
        }
        if (positives == 0 || positives == n) {
            result.skipped_classes.push_back(k);
            continue;
        }
        total += binary_auc(column, onehot);
        ++used;
    }
    if (used < 2) {
        fail(ErrorCode::UndefinedMetric, "macro_ovr_auc: fewer than two classes present");
    }
    result.value = total / used;
    return result;
}

TargetStats TargetStats::from(std::span<const double> values) {
    if (values.empty()) {
        fail(ErrorCode::InvalidData, "target statistics need at least one value");
    }
    double mean = 0.0;
    for (const double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (const double v : values) {
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(values.size());
    if (!(var > 0.0)) {
        fail(ErrorCode::InvalidData, "training targets have zero variance");
    }
    return {mean, std::sqrt(var)};
}

double rmse(std::span<const double> preds, std::span<const double> targets, const TargetStats& stats,
            RmseUnits units) {
    if (preds.size() != targets.size()) {
        fail(ErrorCode::ShapeError, "rmse: prediction and target lengths differ");
    }
    if (preds.empty()) {
        fail(ErrorCode::ShapeError, "rmse: empty input");
    }
    if (!(stats.std > 0.0)) {
        fail(ErrorCode::InvalidInput, "rmse: stats.std must be positive");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double diff = stats.normalize(preds[i]) - stats.normalize(targets[i]);
        sum += diff * diff;
    }
    const double normalized = std::sqrt(sum / static_cast<double>(preds.size()));
    return units == RmseUnits::Normalized ? normalized : normalized * stats.std;
}

} // namespace milbench

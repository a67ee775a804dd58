#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milbench/mccv.hpp"

namespace milbench {

inline constexpr int kExactWilcoxonLimit = 25;
inline constexpr int kMinPairedSplits = 15;

struct WilcoxonResult {
    /// min(W+, W-) over midranks of the nonzero |differences|.
    double w = 0.0;
    double p_two_sided = 1.0;
    int n_effective = 0;
};

/// Signed-rank test on d = x - y with zero differences dropped. Exact
/// enumeration of the realized (tied) rank multiset when at most
/// kExactWilcoxonLimit differences remain, otherwise a tie-corrected normal
/// approximation with continuity correction. Throws InvalidInput for fewer
/// than five pairs or non-finite entries, DegeneratePair when every
/// difference is zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

/// Exact two-sided p for a given list of nonzero differences, no minimum length.
double wilcoxon_exact_p(std::span<const double> diffs);

/// Benjamini-Hochberg step-up adjustment in the original order. Throws
/// InvalidInput for values outside (0, 1].
std::vector<double> bh_adjust(std::span<const double> pvals);

enum class BhScope { Task, Global };
enum class Sign { None, Better, Worse };
enum class Verdict { Win, Tie, Loss };

std::string to_string(Sign s);
std::string to_string(Verdict v);

struct EncoderScores {
    std::string encoder_id;
    /// Per-split values, aligned by split index across encoders.
    std::vector<double> values;
};

/// One task's encoders in ranking order with pairwise adjusted p-values.
struct TaskComparison {
    std::string task_id;
    bool higher_is_better = true;
    /// Sorted best mean first; equal means fall back to encoder id order.
    std::vector<std::string> encoders;
    std::vector<double> means;
    /// k x k, symmetric; 1 on the diagonal and for degenerate pairs.
    std::vector<std::vector<double>> p_raw;
    std::vector<std::vector<double>> p_adj;
    /// Pairs whose differences were all zero (no test run).
    std::vector<std::vector<bool>> degenerate;
    std::vector<int> ranks;
    /// Split indices valid for every encoder; the tests pair on these.
    std::vector<int> used_splits;

    std::size_t index_of(const std::string& encoder_id) const;
    bool better(std::size_t a, std::size_t b) const;
};

/// Sorts encoders and runs every pairwise test; p_adj is a copy of p_raw
/// until adjust_task_family or the global adjustment fills it in.
TaskComparison pairwise_tests(const std::string& task_id, std::vector<EncoderScores> scores, bool higher_is_better);

/// Per-task BH over the non-degenerate pairs.
void adjust_task_family(TaskComparison& task);

/// Greedy grouping in mean order: a new rank starts when the adjusted p
/// against the current group's leader drops below alpha. Fills task.ranks.
void rank_with_significance(TaskComparison& task, double alpha = 0.05);

struct WinTieLoss {
    std::string task_id;
    std::string focal;
    std::string competitor;
    Verdict verdict = Verdict::Tie;
    double p_adj = 1.0;
};

/// Focal encoder against the best-mean other encoder.
WinTieLoss win_tie_loss(const TaskComparison& task, const std::string& focal, double alpha = 0.05);

struct SigCell {
    std::string row;
    std::string col;
    Sign sign = Sign::None;
    double p_adj = 1.0;
    /// "p<0.01", "p<0.05" or "ns".
    std::string bucket;
};

/// Off-diagonal entries in row-major encoder order.
std::vector<SigCell> significance_matrix(const TaskComparison& task, double strong = 0.01, double alpha = 0.05);

struct CompareOptions {
    double alpha = 0.05;
    double strong_alpha = 0.01;
    BhScope scope = BhScope::Task;
    int min_splits = kMinPairedSplits;
};

struct ComparisonReport {
    CompareOptions options;
    std::vector<TaskComparison> tasks;
    /// task id -> reason.
    std::map<std::string, std::string> skipped;
    /// Mean of per-task ranks over the tasks an encoder appears in.
    std::map<std::string, double> overall_mean_rank;
    std::vector<WinTieLoss> verdicts;
    std::map<std::string, std::vector<SigCell>> sig_cells;

    std::string to_json() const;
    /// `task,encoder,mean,rank`
    std::string rank_heatmap_csv() const;
    /// `task,row,col,sign,p_adj`
    std::string sig_matrix_csv() const;
    /// `task,encoder,competitor,verdict,p_adj`
    std::string win_tie_loss_csv() const;
    /// `encoder,mean_rank,tasks`
    std::string overall_rank_csv() const;
};

std::map<std::string, double> overall_mean_rank(const std::vector<TaskComparison>& tasks);

/// Groups tables by task. Within a task every table must share one plan hash
/// and metric direction. Only splits valid for every encoder are paired; a
/// task with fewer than options.min_splits such splits, or fewer than two
/// encoders, is skipped with a reason.
ComparisonReport compare_tables(const std::vector<MetricTable>& tables, const CompareOptions& options = {});

} // namespace milbench

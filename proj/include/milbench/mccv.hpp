#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "milbench/featstore.hpp"
#include "milbench/gma.hpp"
#include "milbench/manifest.hpp"
#include "milbench/rng.hpp"
#include "milbench/tileprobe.hpp"

namespace milbench {

inline constexpr int kSplitCount = 20;
inline constexpr int kRunsPerSplit = 2;
inline constexpr double kTrainFraction = 0.8;

enum class TaskType { Binary, Multiclass, Regression, TileLevel };

std::string to_string(TaskType type);
/// Accepts "binary", "multiclass", "regression", "tile_level".
TaskType parse_task_type(const std::string& text);

struct TaskSpec {
    std::string task_id;
    TaskType type = TaskType::Binary;
    /// Class count for classification kinds (binary is always 2).
    int classes = 2;
    /// Manifest column holding the slide label. For tile-level tasks this
    /// names the tile label file instead.
    std::string label_column;
    /// Empty selects every slide.
    std::string cohort;

    bool is_classification() const { return type != TaskType::Regression; }
    bool higher_is_better() const { return type != TaskType::Regression; }
    std::string metric_name() const;
    void validate() const;
};

enum class SplitGrouping { Patient, Slide };

struct Split {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;

    friend bool operator==(const Split&, const Split&) = default;
};

struct SplitPlan {
    std::string task_id;
    std::uint64_t seed = 0;
    SplitGrouping grouping = SplitGrouping::Patient;
    std::vector<Split> splits;

    std::string to_json() const;
    static SplitPlan from_json(const std::string& text, const std::string& origin = "<memory>");
    /// Hash of the serialized plan; equal across encoders sharing the plan.
    std::string hash() const;

    friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

/// Slides of the task's cohort whose label is present (all cohort slides
/// for tile-level tasks), sorted by slide id.
std::vector<std::string> eligible_slides(const SlideManifest& manifest, const TaskSpec& task);

/// Class index of a slide label for classification tasks; InvalidData if the
/// label is not an integer in [0, classes).
int parse_class_label(const std::string& value, int classes, const std::string& slide_id);
double parse_regression_target(const std::string& value, const std::string& slide_id);

/// Patient grouping falls back to slide grouping when the manifest has no
/// patient ids; a slide with an empty patient id forms its own group.
/// Each split sends round(0.8 * groups) shuffled groups to train.
SplitPlan make_splits(const SlideManifest& manifest, const TaskSpec& task, std::uint64_t seed,
                      SplitGrouping grouping = SplitGrouping::Patient);

/// Returns the balanced id multiset, shuffled. `labels` is aligned with
/// `train_ids`. The default target is the smallest class count; classes
/// below the target are drawn with replacement.
std::vector<std::string> balance_classes(const std::vector<std::string>& train_ids, const std::vector<int>& labels,
                                         int classes, Rng& rng, std::optional<int> target = std::nullopt);

std::uint64_t run_seed(const std::string& task_id, std::uint64_t seed, int split, int run);

struct RunRecord {
    int split = 0;
    int run = 0;
    bool ok = false;
    double value = 0.0;
    std::string error;

    std::string to_json() const;
    static RunRecord from_json(const std::string& text, const std::string& origin = "<memory>");

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct SplitResult {
    std::optional<double> run0;
    std::optional<double> run1;
    /// Mean of both runs; absent when either run failed.
    std::optional<double> value;
};

struct MetricTable {
    std::string task_id;
    std::string encoder_id;
    std::string metric;
    bool higher_is_better = true;
    std::string plan_hash;
    std::vector<SplitResult> splits;
    /// Over valid splits only; std uses the n - 1 denominator.
    double mean = 0.0;
    double std = 0.0;
    int valid_splits = 0;

    bool complete() const { return valid_splits == static_cast<int>(splits.size()); }
    std::vector<double> valid_values() const;
    void summarize();

    /// `task,encoder,split,run0,run1,value` with `mean` and `std` summary rows.
    std::string to_csv() const;
    /// Restores values from the CSV; metric metadata comes from the sidecar.
    static MetricTable from_csv(const std::string& text, const std::string& origin = "<memory>");
};

/// Provenance written next to every output as `<file>.meta.json`.
struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
    /// Extra key/value pairs, emitted in key order.
    std::vector<std::pair<std::string, std::string>> extra;
};

extern const char* const kToolVersion;

std::filesystem::path sidecar_path(const std::filesystem::path& output);
void write_sidecar(const std::filesystem::path& output, const Provenance& prov);

void write_metric_table(const MetricTable& table, const std::filesystem::path& path, const Provenance& prov);
/// Reads the CSV and its sidecar.
MetricTable read_metric_table(const std::filesystem::path& path);

/// Looks up features by (encoder, slide). Missing slides throw MissingFeatures.
using FeatureLoader = std::function<FeatureMatrix(const std::string& encoder_id, const std::string& slide_id)>;

/// Loader over `<root>/<encoder>/<slide>.milf`.
FeatureLoader directory_loader(const std::filesystem::path& root);

struct BenchmarkOptions {
    TrainOptions gma{};
    ProbeOptions probe{};
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    /// Rebalance target override for classification tasks.
    std::optional<int> balance_target;
    /// Tile labels for tile-level tasks.
    const TileLabelMap* tile_labels = nullptr;
    /// When set, each finished run is stored as JSON under this directory and
    /// reused on later calls.
    std::optional<std::filesystem::path> run_dir;
};

/// Trains every (split, run) of the plan and assembles the table. Feature
/// loading happens up front, so MissingFeatures is raised before any
/// training. Numerical failures and infeasible splits mark the split failed.
MetricTable run_benchmark(const TaskSpec& task, const SplitPlan& plan, const SlideManifest& manifest,
                          const std::string& encoder_id, const FeatureLoader& loader,
                          const BenchmarkOptions& options = {});

} // namespace milbench

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "milbench/mccv.hpp"
#include "milbench/preprocess.hpp"
#include "milbench/stats.hpp"
#include "milbench/synthbench.hpp"

namespace milbench {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitPartial = 2 };

/// Benchmark configuration. Loaded from an INI-style file:
///
///   manifest = manifest.csv
///   feature_root = features
///   output_root = out
///   encoders = uni, mock
///   seed = 7
///   [task.idh]
///   kind = binary
///   label = idh
///
/// Relative paths resolve against the config file's directory.
struct RunConfig {
    std::filesystem::path manifest_path;
    std::filesystem::path feature_root;
    std::filesystem::path output_root;
    std::vector<TaskSpec> tasks;
    std::vector<std::string> encoders;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    SplitGrouping grouping = SplitGrouping::Patient;
    TrainOptions gma{};
    ProbeOptions probe{};
    std::optional<int> balance_target;

    /// Hash over everything that affects results: seed, grouping, tasks,
    /// encoders, hyperparameters and the manifest bytes. Paths and the
    /// worker count are excluded.
    std::string hash() const;
    /// hash() without the encoder list; names the run-record directory so
    /// adding an encoder keeps earlier runs reusable.
    std::string run_key() const;
};

/// Sets one top-level key (`key = value` in the file, `--set key=value` on
/// the command line). Throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value,
                   const std::filesystem::path& base_dir);

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                       const std::string& origin = "<memory>");
RunConfig load_config(const std::filesystem::path& path);

/// Renders a config file that parse_config reads back to the same settings.
std::string render_config(const RunConfig& config);

struct TileArgs {
    std::filesystem::path thumbnail_dir;
    std::filesystem::path geometry_dir;
    std::filesystem::path out_dir;
    TilingOptions tiling{};
    std::size_t workers = 1;
};

struct MockEncodeArgs {
    std::filesystem::path grid_dir;
    std::filesystem::path feature_root;
    std::string encoder_id = "mock";
    std::uint32_t dim = 16;
    std::uint64_t seed = 0;
};

struct SynthArgs {
    std::filesystem::path out_dir;
    SynthSpec spec{};
    std::string encoder_id = "synth";
};

struct CompareArgs {
    std::filesystem::path tables_dir;
    std::filesystem::path out_dir;
    CompareOptions options{};
};

struct ProbeArgs {
    /// Directory of `<slide>.milf` files for one encoder.
    std::filesystem::path feature_dir;
    std::filesystem::path labels_path;
    std::filesystem::path out_path;
    int classes = 2;
    std::uint64_t seed = 0;
    ProbeOptions probe{};
};

struct RegionMapArgs {
    std::filesystem::path params_path;
    std::filesystem::path grid_path;
    std::filesystem::path features_path;
    std::filesystem::path out_path;
};

/// Every command writes progress and failures to `log` and returns an ExitCode.
int cmd_tile(const TileArgs& args, std::ostream& log);
int cmd_mock_encode(const MockEncodeArgs& args, std::ostream& log);
int cmd_synth(const SynthArgs& args, std::ostream& log);
int cmd_splits(const RunConfig& config, std::ostream& log);
int cmd_benchmark(const RunConfig& config, std::ostream& log);
int cmd_compare(const CompareArgs& args, std::ostream& log);
int cmd_probe(const ProbeArgs& args, std::ostream& log);
int cmd_region_map(const RegionMapArgs& args, std::ostream& log);

/// `<output_root>/tables/<task>__<encoder>.csv`
std::filesystem::path table_path(const RunConfig& config, const std::string& task_id, const std::string& encoder_id);

} // namespace milbench

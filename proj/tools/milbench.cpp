#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "milbench/cli.hpp"
#include "milbench/error.hpp"

using namespace milbench;

namespace {

SynthKind parse_synth_kind(const std::string& s) {
    if (s == "binary") return SynthKind::MilBinary;
    if (s == "multiclass") return SynthKind::MilMulticlass;
    if (s == "regression") return SynthKind::Regression;
    if (s == "tile_level") return SynthKind::TileLevel;
    fail(ErrorCode::ConfigError, "unknown synthetic kind: " + s);
}

// Loads the config file, then applies --seed/--workers/--set overrides.
RunConfig config_with_overrides(const std::string& path, const std::vector<std::string>& sets, const std::string& seed,
                                const std::string& workers) {
    auto config = load_config(path);
    const std::filesystem::path cwd = std::filesystem::current_path();
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            fail(ErrorCode::ConfigError, "--set expects key=value, got " + kv);
        }
        apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1), cwd);
    }
    if (!seed.empty()) apply_setting(config, "seed", seed, cwd);
    if (!workers.empty()) apply_setting(config, "workers", workers, cwd);
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Slide-level benchmarking of pathology tile encoders"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    TileArgs tile;
    auto* c_tile = app.add_subcommand("tile", "Tissue masks and tile grids from slide thumbnails");
    c_tile->add_option("--thumbnails", tile.thumbnail_dir, "Directory of <slide>.png thumbnails")->required();
    c_tile->add_option("--geometry", tile.geometry_dir, "Directory of <slide>.json geometry files")->required();
    c_tile->add_option("--out", tile.out_dir, "Output directory")->required();
    c_tile->add_option("--tile-px", tile.tiling.tile_px, "Tile edge in pixels at the target resolution");
    c_tile->add_option("--target-mpp", tile.tiling.target_mpp, "Target microns per pixel");
    c_tile->add_option("--stride-px", tile.tiling.stride_px, "Stride at the target resolution (0 = tile size)");
    c_tile->add_option("--min-tissue", tile.tiling.min_tissue_frac, "Minimum tissue fraction per tile");
    c_tile->add_option("--workers", tile.workers, "Worker threads");

    MockEncodeArgs mock;
    auto* c_mock = app.add_subcommand("mock-encode", "Deterministic stand-in features for tile grids");
    c_mock->add_option("--grids", mock.grid_dir, "Directory of <slide>.tiles.csv files")->required();
    c_mock->add_option("--out", mock.feature_root, "Feature root; files go to <out>/<encoder>/")->required();
    c_mock->add_option("--encoder", mock.encoder_id, "Encoder id");
    c_mock->add_option("--dim", mock.dim, "Embedding dimension");
    c_mock->add_option("--seed", mock.seed, "Seed");

    SynthArgs synth;
    std::string synth_kind = "binary";
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic cohort with features and a benchmark config");
    c_synth->add_option("--out", synth.out_dir, "Output directory")->required();
    c_synth->add_option("--kind", synth_kind, "binary, multiclass, regression or tile_level");
    c_synth->add_option("--classes", synth.spec.classes, "Class count for multiclass and tile_level");
    c_synth->add_option("--slides", synth.spec.n_slides, "Number of slides");
    c_synth->add_option("--min-tiles", synth.spec.min_tiles, "Fewest tiles per slide");
    c_synth->add_option("--max-tiles", synth.spec.max_tiles, "Most tiles per slide");
    c_synth->add_option("--dim", synth.spec.dim, "Embedding dimension");
    c_synth->add_option("--signal-fraction", synth.spec.signal_fraction, "Fraction of signal tiles");
    c_synth->add_option("--noise-sigma", synth.spec.noise_sigma, "Tile noise standard deviation");
    c_synth->add_option("--slides-per-patient", synth.spec.slides_per_patient, "Slides per patient (0 = no patient ids)");
    c_synth->add_option("--seed", synth.spec.seed, "Seed");
    c_synth->add_option("--encoder", synth.encoder_id, "Encoder id for the feature directory");

    std::string config_path;
    std::vector<std::string> sets;
    std::string seed_override;
    std::string workers_override;
    auto add_config_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Benchmark config file")->required();
        cmd->add_option("--set", sets, "Override a config key (key=value)");
        cmd->add_option("--seed", seed_override, "Override the seed");
        cmd->add_option("--workers", workers_override, "Override the worker count");
    };
    auto* c_splits = app.add_subcommand("splits", "Write the Monte-Carlo split plans");
    add_config_options(c_splits);
    auto* c_bench = app.add_subcommand("benchmark", "Train and evaluate every task and encoder");
    add_config_options(c_bench);

    CompareArgs compare;
    std::string scope = "task";
    auto* c_compare = app.add_subcommand("compare", "Paired tests, ranks and significance tables");
    c_compare->add_option("--tables", compare.tables_dir, "Directory of metric tables")->required();
    c_compare->add_option("--out", compare.out_dir, "Output directory")->required();
    c_compare->add_option("--alpha", compare.options.alpha, "Significance level");
    c_compare->add_option("--strong-alpha", compare.options.strong_alpha, "Highly significant level");
    c_compare->add_option("--bh-scope", scope, "task or global")->check(CLI::IsMember({"task", "global"}));
    c_compare->add_option("--min-splits", compare.options.min_splits, "Fewest valid paired splits per task");

    ProbeArgs probe;
    auto* c_probe = app.add_subcommand("probe", "Train a tile-level logistic probe");
    c_probe->add_option("--features", probe.feature_dir, "Directory of <slide>.milf files")->required();
    c_probe->add_option("--labels", probe.labels_path, "Tile label CSV (slide_id,x,y,label)")->required();
    c_probe->add_option("--out", probe.out_path, "Output parameter file")->required();
    c_probe->add_option("--classes", probe.classes, "Class count");
    c_probe->add_option("--seed", probe.seed, "Seed");
    c_probe->add_option("--epochs", probe.probe.epochs, "Epochs");

    RegionMapArgs region;
    auto* c_region = app.add_subcommand("region-map", "Per-tile class map from a trained probe");
    c_region->add_option("--params", region.params_path, "Probe parameter file")->required();
    c_region->add_option("--grid", region.grid_path, "Tile grid CSV")->required();
    c_region->add_option("--features", region.features_path, "Feature file for the slide")->required();
    c_region->add_option("--out", region.out_path, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (c_tile->parsed()) return cmd_tile(tile, std::cerr);
        if (c_mock->parsed()) return cmd_mock_encode(mock, std::cerr);
        if (c_synth->parsed()) {
            synth.spec.kind = parse_synth_kind(synth_kind);
            return cmd_synth(synth, std::cerr);
        }
        if (c_splits->parsed()) return cmd_splits(config_with_overrides(config_path, sets, seed_override, workers_override), std::cerr);
        if (c_bench->parsed()) return cmd_benchmark(config_with_overrides(config_path, sets, seed_override, workers_override), std::cerr);
        if (c_compare->parsed()) {
            compare.options.scope = scope == "global" ? BhScope::Global : BhScope::Task;
            return cmd_compare(compare, std::cerr);
        }
        if (c_probe->parsed()) return cmd_probe(probe, std::cerr);
        if (c_region->parsed()) return cmd_region_map(region, std::cerr);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::ConfigError ? kExitConfig : kExitPartial;
    }
    return kExitConfig;
}

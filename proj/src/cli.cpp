#include "milbench/cli.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "milbench/error.hpp"
#include "milbench/image.hpp"
#include "milbench/io.hpp"
#include "milbench/rng.hpp"
#include "milbench/worker_pool.hpp"

namespace milbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        fail(ErrorCode::ConfigError, fmt::format("{}: '{}' is not a valid number", key, value));
    }
    return out;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

fs::path resolve(const fs::path& base, const std::string& value) {
    const fs::path p(value);
    return p.is_absolute() ? p : base / p;
}

void apply_task_setting(TaskSpec& task, const std::string& key, const std::string& value) {
    if (key == "kind") {
        task.type = parse_task_type(value);
    } else if (key == "classes") {
        task.classes = parse_number<int>(key, value);
    } else if (key == "label") {
        task.label_column = value;
    } else if (key == "cohort") {
        task.cohort = value;
    } else {
        fail(ErrorCode::ConfigError, fmt::format("task {}: unknown key '{}'", task.task_id, key));
    }
}

std::vector<fs::path> list_files(const fs::path& dir, std::string_view suffix) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) {
        fail(ErrorCode::ConfigError, dir.string() + " is not a directory");
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix)) {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string strip_suffix(const fs::path& path, std::string_view suffix) {
    const auto name = path.filename().string();
    return name.substr(0, name.size() - suffix.size());
}

std::string hash_json(const json& j) { return hex64(fnv1a64(j.dump())); }

} // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value, const fs::path& base_dir) {
    if (key == "manifest") {
        config.manifest_path = resolve(base_dir, value);
    } else if (key == "feature_root") {
        config.feature_root = resolve(base_dir, value);
    } else if (key == "output_root") {
        config.output_root = resolve(base_dir, value);
    } else if (key == "encoders") {
        config.encoders = split_list(value);
    } else if (key == "seed") {
        config.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "workers") {
        config.workers = parse_number<std::size_t>(key, value);
    } else if (key == "grouping") {
        if (value != "patient" && value != "slide") {
            fail(ErrorCode::ConfigError, "grouping must be 'patient' or 'slide'");
        }
        config.grouping = value == "patient" ? SplitGrouping::Patient : SplitGrouping::Slide;
    } else if (key == "hidden") {
        config.gma.hidden = parse_number<int>(key, value);
    } else if (key == "epochs") {
        config.gma.epochs = parse_number<int>(key, value);
    } else if (key == "lr") {
        config.gma.optim.lr_peak = parse_number<double>(key, value);
        config.probe.optim.lr_peak = config.gma.optim.lr_peak;
    } else if (key == "weight_decay") {
        config.gma.optim.weight_decay = parse_number<double>(key, value);
        config.probe.optim.weight_decay = config.gma.optim.weight_decay;
    } else if (key == "warmup_frac") {
        config.gma.warmup_frac = parse_number<double>(key, value);
        config.probe.warmup_frac = config.gma.warmup_frac;
    } else if (key == "probe_epochs") {
        config.probe.epochs = parse_number<int>(key, value);
    } else if (key == "probe_batch_size") {
        config.probe.batch_size = parse_number<int>(key, value);
    } else if (key == "balance_target") {
        config.balance_target = parse_number<int>(key, value);
    } else {
        fail(ErrorCode::ConfigError, "unknown config key '" + key + "'");
    }
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir, const std::string& origin) {
    RunConfig config;
    TaskSpec* task = nullptr;
    std::set<std::string> task_ids;
    std::stringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') {
            continue;
        }
        const auto where = fmt::format("{}:{}", origin, line_no);
        if (line.front() == '[') {
            if (line.back() != ']' || !line.starts_with("[task.") || line.size() <= 7) {
                fail(ErrorCode::ConfigError, where + ": sections must look like [task.<id>]");
            }
            TaskSpec spec;
            spec.task_id = line.substr(6, line.size() - 7);
            if (!task_ids.insert(spec.task_id).second) {
                fail(ErrorCode::ConfigError, where + ": duplicate task " + spec.task_id);
            }
            config.tasks.push_back(spec);
            task = &config.tasks.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorCode::ConfigError, where + ": expected key = value");
        }
        const auto key = trim(std::string_view(line).substr(0, eq));
        const auto value = trim(std::string_view(line).substr(eq + 1));
        try {
            if (task) {
                apply_task_setting(*task, key, value);
            } else {
                apply_setting(config, key, value, base_dir);
            }
        } catch (const Error& e) {
            fail(ErrorCode::ConfigError, where + ": " + e.what());
        }
    }
    for (auto& t : config.tasks) {
        if (t.type == TaskType::Binary) {
            t.classes = 2;
        }
    }
    return config;
}

RunConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) {
        fail(ErrorCode::ConfigError, "config file not found: " + path.string());
    }
    return parse_config(read_text(path), path.parent_path(), path.string());
}

std::string render_config(const RunConfig& c) {
    std::string out;
    out += fmt::format("manifest = {}\n", c.manifest_path.string());
    out += fmt::format("feature_root = {}\n", c.feature_root.string());
    out += fmt::format("output_root = {}\n", c.output_root.string());
    std::string encoders;
    for (const auto& e : c.encoders) {
        encoders += (encoders.empty() ? "" : ", ") + e;
    }
    out += fmt::format("encoders = {}\n", encoders);
    out += fmt::format("seed = {}\n", c.seed);
    out += fmt::format("workers = {}\n", c.workers);
    out += fmt::format("grouping = {}\n", c.grouping == SplitGrouping::Patient ? "patient" : "slide");
    out += fmt::format("hidden = {}\nepochs = {}\n", c.gma.hidden, c.gma.epochs);
    out += fmt::format("lr = {}\nweight_decay = {}\nwarmup_frac = {}\n", c.gma.optim.lr_peak, c.gma.optim.weight_decay,
                       c.gma.warmup_frac);
    out += fmt::format("probe_epochs = {}\nprobe_batch_size = {}\n", c.probe.epochs, c.probe.batch_size);
    if (c.balance_target) {
        out += fmt::format("balance_target = {}\n", *c.balance_target);
    }
    for (const auto& t : c.tasks) {
        out += fmt::format("\n[task.{}]\nkind = {}\nclasses = {}\nlabel = {}\n", t.task_id, to_string(t.type), t.classes,
                           t.label_column);
        if (!t.cohort.empty()) {
            out += fmt::format("cohort = {}\n", t.cohort);
        }
    }
    return out;
}

namespace {

json hash_fields(const RunConfig& c) {
    const auto& gma = c.gma;
    const auto& probe = c.probe;
    json j;
    j["seed"] = c.seed;
    j["grouping"] = c.grouping == SplitGrouping::Patient ? "patient" : "slide";
    j["hidden"] = gma.hidden;
    j["epochs"] = gma.epochs;
    j["warmup_frac"] = gma.warmup_frac;
    j["lr"] = gma.optim.lr_peak;
    j["weight_decay"] = gma.optim.weight_decay;
    j["betas"] = {gma.optim.beta1, gma.optim.beta2};
    j["eps"] = gma.optim.eps;
    j["probe"] = {probe.epochs, probe.batch_size, probe.warmup_frac, probe.optim.lr_peak, probe.optim.weight_decay};
    j["balance_target"] = c.balance_target ? *c.balance_target : 0;
    j["tasks"] = json::array();
    for (const auto& t : c.tasks) {
        j["tasks"].push_back({t.task_id, to_string(t.type), t.classes, t.label_column, t.cohort});
    }
    j["manifest"] = fs::exists(c.manifest_path) ? hex64(fnv1a64(read_text(c.manifest_path))) : "";
    return j;
}

} // namespace

std::string RunConfig::hash() const {
    auto j = hash_fields(*this);
    j["encoders"] = encoders;
    return hash_json(j);
}

std::string RunConfig::run_key() const { return hash_json(hash_fields(*this)); }

fs::path table_path(const RunConfig& config, const std::string& task_id, const std::string& encoder_id) {
    return config.output_root / "tables" / (task_id + "__" + encoder_id + ".csv");
}

int cmd_tile(const TileArgs& args, std::ostream& log) {
    std::vector<fs::path> thumbs;
    try {
        thumbs = list_files(args.thumbnail_dir, ".png");
    } catch (const Error& e) {
        log << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    if (thumbs.empty()) {
        log << "warning: no thumbnails in " << args.thumbnail_dir.string() << "\n";
        return kExitOk;
    }
    json opts;
    opts["tile_px"] = args.tiling.tile_px;
    opts["target_mpp"] = args.tiling.target_mpp;
    opts["stride_px"] = args.tiling.stride_px;
    opts["min_tissue_frac"] = args.tiling.min_tissue_frac;
    const Provenance prov{hash_json(opts), 0, {}};

    std::vector<std::string> errors(thumbs.size());
    parallel_for(thumbs.size(), args.workers, [&](std::size_t i) {
        const auto slide_id = strip_suffix(thumbs[i], ".png");
        try {
            const auto geom = read_geometry_json(args.geometry_dir / (slide_id + ".json"));
            Thumbnail thumb;
            thumb.image = read_png_rgb(thumbs[i]);
            thumb.downsample = static_cast<double>(geom.width_px) / thumb.image.width;
            const auto mask = build_tissue_mask(thumb);
            const auto grid = enumerate_tiles(mask, geom, args.tiling);
            const auto csv_path = args.out_dir / (slide_id + ".tiles.csv");
            const auto mask_path = args.out_dir / (slide_id + ".mask.png");
            write_tile_grid_csv(csv_path, grid);
            write_mask_png(mask_path, mask);
            write_sidecar(csv_path, prov);
            write_sidecar(mask_path, prov);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    int failed = 0;
    for (std::size_t i = 0; i < thumbs.size(); ++i) {
        if (!errors[i].empty()) {
            ++failed;
            log << "failed: " << thumbs[i].filename().string() << ": " << errors[i] << "\n";
        }
    }
    log << fmt::format("tiled {} of {} slides\n", thumbs.size() - static_cast<std::size_t>(failed), thumbs.size());
    return failed == 0 ? kExitOk : kExitPartial;
}

int cmd_mock_encode(const MockEncodeArgs& args, std::ostream& log) {
    std::vector<fs::path> grids;
    try {
        grids = list_files(args.grid_dir, ".tiles.csv");
    } catch (const Error& e) {
        log << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    if (args.dim == 0) {
        log << "error: dim must be positive\n";
        return kExitConfig;
    }
    json opts{{"encoder", args.encoder_id}, {"dim", args.dim}};
    const Provenance prov{hash_json(opts), args.seed, {}};
    int failed = 0;
    for (const auto& path : grids) {
        try {
            const auto grid = read_tile_grid_csv(path);
            const auto m = mock_encode(grid, args.dim, args.seed, args.encoder_id);
            const auto out = args.feature_root / args.encoder_id / (grid.slide_id + ".milf");
            write_features(m, out);
            write_sidecar(out, prov);
        } catch (const Error& e) {
            ++failed;
            log << "failed: " << path.filename().string() << ": " << e.what() << "\n";
        }
    }
    log << fmt::format("encoded {} of {} grids\n", grids.size() - static_cast<std::size_t>(failed), grids.size());
    return failed == 0 ? kExitOk : kExitPartial;
}

int cmd_synth(const SynthArgs& args, std::ostream& log) {
    SynthDataset data;
    try {
        data = gen_mil_dataset(args.spec, args.encoder_id);
    } catch (const Error& e) {
        log << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    write_synth_dataset(data, args.out_dir);

    RunConfig config;
    config.manifest_path = "manifest.csv";
    config.feature_root = "features";
    config.output_root = "out";
    config.encoders = {args.encoder_id};
    config.seed = args.spec.seed;
    TaskSpec task;
    task.task_id = "synth";
    task.label_column = args.spec.label_column;
    switch (args.spec.kind) {
    case SynthKind::MilBinary: task.type = TaskType::Binary; break;
    case SynthKind::MilMulticlass: task.type = TaskType::Multiclass; break;
    case SynthKind::Regression: task.type = TaskType::Regression; break;
    case SynthKind::TileLevel: task.type = TaskType::TileLevel; break;
    }
    task.classes = task.type == TaskType::Multiclass || task.type == TaskType::TileLevel ? args.spec.classes : 2;
    config.tasks = {task};
    write_text_atomic(args.out_dir / "benchmark.ini", render_config(config));
    log << fmt::format("wrote {} slides to {}\n", data.features.size(), args.out_dir.string());
    return kExitOk;
}

namespace {

// Checks everything a benchmark needs before any work starts.
std::optional<std::string> validate_run(const RunConfig& config, SlideManifest& manifest) {
    if (config.tasks.empty()) {
        return "config defines no tasks";
    }
    if (config.encoders.empty()) {
        return "config lists no encoders";
    }
    if (config.workers == 0) {
        return "workers must be at least 1";
    }
    if (!fs::exists(config.manifest_path)) {
        return "manifest not found: " + config.manifest_path.string();
    }
    try {
        manifest = SlideManifest::read(config.manifest_path);
        for (const auto& t : config.tasks) {
            t.validate();
            if (t.type != TaskType::TileLevel &&
                std::find(manifest.label_columns.begin(), manifest.label_columns.end(), t.label_column) ==
                    manifest.label_columns.end()) {
                return fmt::format("task {}: manifest has no column '{}'", t.task_id, t.label_column);
            }
            if (t.type == TaskType::TileLevel && !fs::exists(config.manifest_path.parent_path() / (t.label_column + ".csv"))) {
                return fmt::format("task {}: tile label file {}.csv not found next to the manifest", t.task_id, t.label_column);
            }
        }
    } catch (const Error& e) {
        return e.what();
    }
    std::set<std::string> seen;
    for (const auto& e : config.encoders) {
        if (!seen.insert(e).second) {
            return "duplicate encoder " + e;
        }
        if (!fs::is_directory(config.feature_root / e)) {
            return fmt::format("unknown encoder '{}': no directory {}", e, (config.feature_root / e).string());
        }
    }
    return std::nullopt;
}

Provenance run_provenance(const RunConfig& config) { return {config.hash(), config.seed, {}}; }

fs::path plan_path(const RunConfig& config, const std::string& task_id) {
    return config.output_root / "splits" / (task_id + ".json");
}

// Builds and persists every task's plan; infeasible tasks are reported and left out.
std::map<std::string, SplitPlan> build_plans(const RunConfig& config, const SlideManifest& manifest, std::ostream& log,
                                             bool& partial) {
    std::map<std::string, SplitPlan> plans;
    for (const auto& t : config.tasks) {
        try {
            auto plan = make_splits(manifest, t, config.seed, config.grouping);
            const auto path = plan_path(config, t.task_id);
            write_text_atomic(path, plan.to_json());
            auto prov = run_provenance(config);
            prov.extra.emplace_back("plan_hash", plan.hash());
            write_sidecar(path, prov);
            plans.emplace(t.task_id, std::move(plan));
        } catch (const Error& e) {
            partial = true;
            log << fmt::format("task {}: {}\n", t.task_id, e.what());
        }
    }
    return plans;
}

} // namespace

int cmd_splits(const RunConfig& config, std::ostream& log) {
    SlideManifest manifest;
    if (const auto problem = validate_run(config, manifest)) {
        log << "config error: " << *problem << "\n";
        return kExitConfig;
    }
    bool partial = false;
    const auto plans = build_plans(config, manifest, log, partial);
    log << fmt::format("wrote {} split plans\n", plans.size());
    return partial ? kExitPartial : kExitOk;
}

int cmd_benchmark(const RunConfig& config, std::ostream& log) {
    SlideManifest manifest;
    if (const auto problem = validate_run(config, manifest)) {
        log << "config error: " << *problem << "\n";
        return kExitConfig;
    }
    bool partial = false;
    const auto plans = build_plans(config, manifest, log, partial);
    const auto run_key = config.run_key();
    const auto loader = directory_loader(config.feature_root);

    std::string summary = "task,encoder,metric,mean,std,valid_splits\n";
    for (const auto& task : config.tasks) {
        const auto plan = plans.find(task.task_id);
        if (plan == plans.end()) {
            continue;
        }
        std::optional<TileLabelMap> tile_labels;
        if (task.type == TaskType::TileLevel) {
            tile_labels = read_tile_labels(config.manifest_path.parent_path() / (task.label_column + ".csv"));
        }
        for (const auto& encoder : config.encoders) {
            BenchmarkOptions opts;
            opts.gma = config.gma;
            opts.probe = config.probe;
            opts.seed = config.seed;
            opts.workers = config.workers;
            opts.balance_target = config.balance_target;
            opts.tile_labels = tile_labels ? &*tile_labels : nullptr;
            opts.run_dir = config.output_root / "runs" / run_key / task.task_id / encoder;
            MetricTable table;
            try {
                table = run_benchmark(task, plan->second, manifest, encoder, loader, opts);
            } catch (const Error& e) {
                partial = true;
                const auto what = e.code() == ErrorCode::MissingFeatures ? fmt::format("missing features for slide {}", e.what())
                                                                         : std::string(e.what());
                log << fmt::format("task {} encoder {}: {}\n", task.task_id, encoder, what);
                continue;
            }
            write_metric_table(table, table_path(config, task.task_id, encoder), run_provenance(config));
            if (!table.complete()) {
                partial = true;
                log << fmt::format("task {} encoder {}: {} of {} splits failed\n", task.task_id, encoder,
                                   table.splits.size() - static_cast<std::size_t>(table.valid_splits), table.splits.size());
            }
            summary += fmt::format("{},{},{},{},{},{}\n", task.task_id, encoder, table.metric, table.mean, table.std,
                                   table.valid_splits);
            log << fmt::format("task {} encoder {}: {} {:.4f} +/- {:.4f}\n", task.task_id, encoder, table.metric, table.mean,
                               table.std);
        }
    }
    const auto summary_path = config.output_root / "summary.csv";
    write_text_atomic(summary_path, summary);
    write_sidecar(summary_path, run_provenance(config));
    return partial ? kExitPartial : kExitOk;
}

int cmd_compare(const CompareArgs& args, std::ostream& log) {
    std::vector<MetricTable> tables;
    json inputs = json::array();
    std::uint64_t seed = 0;
    try {
        for (const auto& path : list_files(args.tables_dir, ".csv")) {
            tables.push_back(read_metric_table(path));
            inputs.push_back(hex64(fnv1a64(read_text(path))));
            seed = json::parse(read_text(sidecar_path(path))).value("seed", std::uint64_t{0});
        }
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    std::set<std::string> encoders;
    for (const auto& t : tables) {
        encoders.insert(t.encoder_id);
    }
    if (encoders.size() < 2) {
        log << "error: comparison needs tables from at least two encoders\n";
        return kExitConfig;
    }
    ComparisonReport report;
    try {
        report = compare_tables(tables, args.options);
    } catch (const Error& e) {
        log << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    json opts{{"alpha", args.options.alpha},
              {"strong_alpha", args.options.strong_alpha},
              {"scope", args.options.scope == BhScope::Task ? "task" : "global"},
              {"min_splits", args.options.min_splits},
              {"inputs", inputs}};
    const Provenance prov{hash_json(opts), seed, {}};
    const std::vector<std::pair<std::string, std::string>> outputs = {
        {"report.json", report.to_json()},
        {"rank_heatmap.csv", report.rank_heatmap_csv()},
        {"sig_matrix.csv", report.sig_matrix_csv()},
        {"win_tie_loss.csv", report.win_tie_loss_csv()},
        {"overall_rank.csv", report.overall_rank_csv()},
    };
    for (const auto& [name, content] : outputs) {
        write_text_atomic(args.out_dir / name, content);
        write_sidecar(args.out_dir / name, prov);
    }
    for (const auto& [task, reason] : report.skipped) {
        log << fmt::format("task {} skipped: {}\n", task, reason);
    }
    log << fmt::format("compared {} tasks\n", report.tasks.size());
    return report.skipped.empty() ? kExitOk : kExitPartial;
}

int cmd_probe(const ProbeArgs& args, std::ostream& log) {
    try {
        const auto labels = read_tile_labels(args.labels_path);
        std::vector<FeatureMatrix> slides;
        for (const auto& [slide_id, tiles] : labels) {
            const auto path = args.feature_dir / (slide_id + ".milf");
            if (fs::exists(path)) {
                slides.push_back(read_features(path));
            } else {
                log << "warning: no features for slide " << slide_id << "\n";
            }
        }
        if (slides.size() < 2) {
            log << "error: need labelled features for at least two slides\n";
            return kExitConfig;
        }
        std::vector<std::size_t> order(slides.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        Rng rng(hash_combine(args.seed, "probe-split"));
        rng.shuffle(order);
        const auto n_train = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::lround(kTrainFraction * static_cast<double>(slides.size()))), 1, slides.size() - 1);
        std::vector<const FeatureMatrix*> train;
        std::vector<const FeatureMatrix*> val;
        for (std::size_t i = 0; i < order.size(); ++i) {
            (i < n_train ? train : val).push_back(&slides[order[i]]);
        }
        const auto result = probe_train(gather_labeled_tiles(train, labels), gather_labeled_tiles(val, labels), args.classes,
                                        args.seed, args.probe);
        write_probe_params(result.params, args.out_path);
        json opts{{"classes", args.classes}, {"epochs", args.probe.epochs}, {"batch_size", args.probe.batch_size}};
        write_sidecar(args.out_path, {hash_json(opts), args.seed, {{"val_macro_auc", fmt::format("{}", result.val_macro_auc)}}});
        log << fmt::format("validation macro AUC {:.4f}\n", result.val_macro_auc);
        return kExitOk;
    } catch (const Error& e) {
        log << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

int cmd_region_map(const RegionMapArgs& args, std::ostream& log) {
    try {
        const auto params = read_probe_params(args.params_path);
        const auto grid = read_tile_grid_csv(args.grid_path);
        const auto features = read_features(args.features_path);
        const auto cells = region_map(params, grid, features);
        write_text_atomic(args.out_path, region_map_csv(grid.slide_id, cells));
        const auto params_hash = hex64(fnv1a64(read_text(args.params_path)));
        write_sidecar(args.out_path, {params_hash, 0, {}});
        log << fmt::format("mapped {} tiles\n", cells.size());
        return kExitOk;
    } catch (const Error& e) {
        log << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

} // namespace milbench

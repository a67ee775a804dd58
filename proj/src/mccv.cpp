#include "milbench/mccv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "milbench/csv.hpp"
#include "milbench/error.hpp"
#include "milbench/io.hpp"
#include "milbench/rng.hpp"
#include "milbench/worker_pool.hpp"

namespace milbench {

using nlohmann::json;

const char* const kToolVersion = "0.1.0";

std::string to_string(TaskType type) {
    switch (type) {
    case TaskType::Binary: return "binary";
    case TaskType::Multiclass: return "multiclass";
    case TaskType::Regression: return "regression";
    case TaskType::TileLevel: return "tile_level";
    }
    return "unknown";
}

TaskType parse_task_type(const std::string& text) {
    if (text == "binary") return TaskType::Binary;
    if (text == "multiclass") return TaskType::Multiclass;
    if (text == "regression") return TaskType::Regression;
    if (text == "tile_level") return TaskType::TileLevel;
    fail(ErrorCode::ConfigError, "unknown task kind: " + text);
}

std::string TaskSpec::metric_name() const {
    switch (type) {
    case TaskType::Binary: return "auc";
    case TaskType::Multiclass:
    case TaskType::TileLevel: return "macro_auc";
    case TaskType::Regression: return "rmse";
    }
    return "unknown";
}

void TaskSpec::validate() const {
    if (task_id.empty()) {
        fail(ErrorCode::ConfigError, "task id must not be empty");
    }
    if (label_column.empty()) {
        fail(ErrorCode::ConfigError, "task " + task_id + ": label column must not be empty");
    }
    if (type == TaskType::Binary && classes != 2) {
        fail(ErrorCode::ConfigError, "task " + task_id + ": binary tasks have exactly two classes");
    }
    if (is_classification() && classes < 2) {
        fail(ErrorCode::ConfigError, "task " + task_id + ": need at least two classes");
    }
}

int parse_class_label(const std::string& value, int classes, const std::string& slide_id) {
    int cls = -1;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), cls);
    if (ec != std::errc{} || ptr != value.data() + value.size() || cls < 0 || cls >= classes) {
        fail(ErrorCode::InvalidData, fmt::format("slide {}: label '{}' is not a class index in [0, {})", slide_id, value, classes));
    }
    return cls;
}

double parse_regression_target(const std::string& value, const std::string& slide_id) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(v)) {
        fail(ErrorCode::InvalidData, fmt::format("slide {}: target '{}' is not a finite number", slide_id, value));
    }
    return v;
}

std::vector<std::string> eligible_slides(const SlideManifest& manifest, const TaskSpec& task) {
    std::vector<std::string> ids;
    for (const auto& s : manifest.slides) {
        if (!task.cohort.empty() && s.cohort != task.cohort) {
            continue;
        }
        if (task.type != TaskType::TileLevel && !manifest.label(s, task.label_column)) {
            continue;
        }
        ids.push_back(s.slide_id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

std::string grouping_name(SplitGrouping g) { return g == SplitGrouping::Patient ? "patient" : "slide"; }

std::map<std::string, const SlideRecord*> index_manifest(const SlideManifest& manifest) {
    std::map<std::string, const SlideRecord*> out;
    for (const auto& s : manifest.slides) {
        out[s.slide_id] = &s;
    }
    return out;
}

} // namespace

SplitPlan make_splits(const SlideManifest& manifest, const TaskSpec& task, std::uint64_t seed, SplitGrouping grouping) {
    task.validate();
    const auto ids = eligible_slides(manifest, task);
    if (ids.size() < 5) {
        fail(ErrorCode::InfeasibleTask, fmt::format("task {}: {} eligible slides, need at least 5", task.task_id, ids.size()));
    }
    const auto records = index_manifest(manifest);

    if (task.type == TaskType::Binary || task.type == TaskType::Multiclass) {
        std::vector<int> counts(static_cast<std::size_t>(task.classes), 0);
        for (const auto& id : ids) {
            const auto* rec = records.at(id);
            ++counts[static_cast<std::size_t>(parse_class_label(*manifest.label(*rec, task.label_column), task.classes, id))];
        }
        for (int k = 0; k < task.classes; ++k) {
            if (counts[static_cast<std::size_t>(k)] < 2) {
                fail(ErrorCode::InfeasibleTask,
                     fmt::format("task {}: class {} has {} slides, need at least 2", task.task_id, k, counts[static_cast<std::size_t>(k)]));
            }
        }
    } else if (task.type == TaskType::Regression) {
        for (const auto& id : ids) {
            parse_regression_target(*manifest.label(*records.at(id), task.label_column), id);
        }
    }

    const bool by_patient = grouping == SplitGrouping::Patient && manifest.has_patients();
    // groups in order of first appearance over the sorted slide ids
    std::vector<std::vector<std::string>> groups;
    std::map<std::string, std::size_t> group_of;
    for (const auto& id : ids) {
        const auto& patient = records.at(id)->patient_id;
        if (by_patient && !patient.empty()) {
            const auto [it, inserted] = group_of.emplace(patient, groups.size());
            if (inserted) {
                groups.emplace_back();
            }
            groups[it->second].push_back(id);
        } else {
            groups.push_back({id});
        }
    }

    SplitPlan plan;
    plan.task_id = task.task_id;
    plan.seed = seed;
    plan.grouping = grouping;
    Rng rng(hash_combine(hash_combine(0, task.task_id), seed));
    const auto n_train = static_cast<std::size_t>(std::lround(kTrainFraction * static_cast<double>(groups.size())));
    std::vector<std::size_t> order(groups.size());
    for (int s = 0; s < kSplitCount; ++s) {
        for (std::size_t g = 0; g < order.size(); ++g) {
            order[g] = g;
        }
        rng.shuffle(order);
        Split split;
        for (std::size_t i = 0; i < order.size(); ++i) {
            auto& side = i < n_train ? split.train_ids : split.val_ids;
            const auto& members = groups[order[i]];
            side.insert(side.end(), members.begin(), members.end());
        }
        std::sort(split.train_ids.begin(), split.train_ids.end());
        std::sort(split.val_ids.begin(), split.val_ids.end());
        plan.splits.push_back(std::move(split));
    }
    return plan;
}

std::string SplitPlan::to_json() const {
    json j;
    j["task_id"] = task_id;
    j["seed"] = seed;
    j["grouping"] = grouping_name(grouping);
    j["splits"] = json::array();
    for (const auto& s : splits) {
        j["splits"].push_back({{"train", s.train_ids}, {"val", s.val_ids}});
    }
    return j.dump(1) + "\n";
}

SplitPlan SplitPlan::from_json(const std::string& text, const std::string& origin) {
    try {
        const auto j = json::parse(text);
        SplitPlan plan;
        plan.task_id = j.at("task_id").get<std::string>();
        plan.seed = j.at("seed").get<std::uint64_t>();
        const auto g = j.at("grouping").get<std::string>();
        if (g != "patient" && g != "slide") {
            fail(ErrorCode::FormatError, origin + ": unknown grouping " + g);
        }
        plan.grouping = g == "patient" ? SplitGrouping::Patient : SplitGrouping::Slide;
        for (const auto& s : j.at("splits")) {
            plan.splits.push_back({s.at("train").get<std::vector<std::string>>(), s.at("val").get<std::vector<std::string>>()});
        }
        if (plan.splits.size() != static_cast<std::size_t>(kSplitCount)) {
            fail(ErrorCode::FormatError, fmt::format("{}: expected {} splits, found {}", origin, kSplitCount, plan.splits.size()));
        }
        return plan;
    } catch (const json::exception& e) {
        fail(ErrorCode::FormatError, origin + ": " + e.what());
    }
}

std::string SplitPlan::hash() const { return hex64(fnv1a64(to_json())); }

std::vector<std::string> balance_classes(const std::vector<std::string>& train_ids, const std::vector<int>& labels,
                                         int classes, Rng& rng, std::optional<int> target) {
    if (train_ids.size() != labels.size()) {
        fail(ErrorCode::ShapeError, "balance_classes: ids and labels differ in length");
    }
    std::vector<std::vector<std::string>> by_class(static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) {
            fail(ErrorCode::InvalidInput, fmt::format("balance_classes: label {} out of range", labels[i]));
        }
        by_class[static_cast<std::size_t>(labels[i])].push_back(train_ids[i]);
    }
    std::size_t smallest = train_ids.size();
    for (int k = 0; k < classes; ++k) {
        const auto& members = by_class[static_cast<std::size_t>(k)];
        if (members.empty()) {
            fail(ErrorCode::InfeasibleSplit, fmt::format("balance_classes: class {} is empty in train", k));
        }
        smallest = std::min(smallest, members.size());
    }
    if (target && *target < 1) {
        fail(ErrorCode::InvalidInput, "balance_classes: target must be positive");
    }
    const auto want = target ? static_cast<std::size_t>(*target) : smallest;

    std::vector<std::string> out;
    for (auto& members : by_class) {
        if (members.size() >= want) {
            rng.shuffle(members);
            out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(want));
        } else {
            out.insert(out.end(), members.begin(), members.end());
            for (std::size_t i = members.size(); i < want; ++i) {
                out.push_back(members[static_cast<std::size_t>(rng.below(members.size()))]);
            }
        }
    }
    rng.shuffle(out);
    return out;
}

std::uint64_t run_seed(const std::string& task_id, std::uint64_t seed, int split, int run) {
    std::uint64_t h = hash_combine(hash_combine(0, task_id), seed);
    h = hash_combine(h, static_cast<std::uint64_t>(split));
    return hash_combine(h, static_cast<std::uint64_t>(run));
}

std::string RunRecord::to_json() const {
    json j;
    j["split"] = split;
    j["run"] = run;
    j["ok"] = ok;
    if (ok) {
        j["value"] = value;
    } else {
        j["error"] = error;
    }
    return j.dump() + "\n";
}

RunRecord RunRecord::from_json(const std::string& text, const std::string& origin) {
    try {
        const auto j = json::parse(text);
        RunRecord r;
        r.split = j.at("split").get<int>();
        r.run = j.at("run").get<int>();
        r.ok = j.at("ok").get<bool>();
        if (r.ok) {
            r.value = j.at("value").get<double>();
        } else {
            r.error = j.at("error").get<std::string>();
        }
        return r;
    } catch (const json::exception& e) {
        fail(ErrorCode::FormatError, origin + ": " + e.what());
    }
}

std::vector<double> MetricTable::valid_values() const {
    std::vector<double> out;
    for (const auto& s : splits) {
        if (s.value) {
            out.push_back(*s.value);
        }
    }
    return out;
}

void MetricTable::summarize() {
    const auto values = valid_values();
    valid_splits = static_cast<int>(values.size());
    mean = 0.0;
    std = 0.0;
    if (values.empty()) {
        return;
    }
    for (double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - mean) * (v - mean);
        }
        std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
}

namespace {

std::string num(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string{}; }

std::optional<double> parse_opt(const std::string& field, const std::string& origin) {
    if (field.empty()) {
        return std::nullopt;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
        fail(ErrorCode::FormatError, origin + ": bad number '" + field + "'");
    }
    return v;
}

} // namespace

std::string MetricTable::to_csv() const {
    csv::check_field(task_id);
    csv::check_field(encoder_id);
    std::string out = "task,encoder,split,run0,run1,value\n";
    for (std::size_t i = 0; i < splits.size(); ++i) {
        const auto& s = splits[i];
        out += fmt::format("{},{},{},{},{},{}\n", task_id, encoder_id, i, num(s.run0), num(s.run1), num(s.value));
    }
    const bool any = valid_splits > 0;
    out += fmt::format("{},{},mean,,,{}\n", task_id, encoder_id, any ? fmt::format("{}", mean) : "");
    out += fmt::format("{},{},std,,,{}\n", task_id, encoder_id, any ? fmt::format("{}", std) : "");
    return out;
}

MetricTable MetricTable::from_csv(const std::string& text, const std::string& origin) {
    const auto table = csv::parse(text, origin);
    const auto c_task = table.require_column("task");
    const auto c_enc = table.require_column("encoder");
    const auto c_split = table.require_column("split");
    const auto c_r0 = table.require_column("run0");
    const auto c_r1 = table.require_column("run1");
    const auto c_val = table.require_column("value");
    MetricTable m;
    for (const auto& row : table.rows) {
        if (m.task_id.empty()) {
            m.task_id = row[c_task];
            m.encoder_id = row[c_enc];
        } else if (row[c_task] != m.task_id || row[c_enc] != m.encoder_id) {
            fail(ErrorCode::FormatError, origin + ": rows mix tasks or encoders");
        }
        const auto& split = row[c_split];
        if (split == "mean" || split == "std") {
            continue;
        }
        if (split != std::to_string(m.splits.size())) {
            fail(ErrorCode::FormatError, origin + ": split indices must run 0, 1, ... in order");
        }
        m.splits.push_back({parse_opt(row[c_r0], origin), parse_opt(row[c_r1], origin), parse_opt(row[c_val], origin)});
    }
    if (m.splits.empty()) {
        fail(ErrorCode::FormatError, origin + ": no split rows");
    }
    m.summarize();
    return m;
}

std::filesystem::path sidecar_path(const std::filesystem::path& output) {
    auto p = output;
    p += ".meta.json";
    return p;
}

void write_sidecar(const std::filesystem::path& output, const Provenance& prov) {
    json j;
    j["tool"] = "milbench";
    j["version"] = kToolVersion;
    j["config_hash"] = prov.config_hash;
    j["seed"] = prov.seed;
    for (const auto& [k, v] : prov.extra) {
        j[k] = v;
    }
    write_text_atomic(sidecar_path(output), j.dump(1) + "\n");
}

void write_metric_table(const MetricTable& table, const std::filesystem::path& path, const Provenance& prov) {
    auto full = prov;
    full.extra.emplace_back("metric", table.metric);
    full.extra.emplace_back("higher_is_better", table.higher_is_better ? "true" : "false");
    full.extra.emplace_back("plan_hash", table.plan_hash);
    full.extra.emplace_back("valid_splits", std::to_string(table.valid_splits));
    write_text_atomic(path, table.to_csv());
    write_sidecar(path, full);
}

MetricTable read_metric_table(const std::filesystem::path& path) {
    auto table = MetricTable::from_csv(read_text(path), path.string());
    const auto meta_path = sidecar_path(path);
    try {
        const auto j = json::parse(read_text(meta_path));
        table.metric = j.at("metric").get<std::string>();
        table.higher_is_better = j.at("higher_is_better").get<std::string>() == "true";
        table.plan_hash = j.at("plan_hash").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorCode::FormatError, meta_path.string() + ": " + e.what());
    }
    return table;
}

FeatureLoader directory_loader(const std::filesystem::path& root) {
    return [root](const std::string& encoder_id, const std::string& slide_id) {
        const auto path = root / encoder_id / (slide_id + ".milf");
        if (!std::filesystem::exists(path)) {
            fail(ErrorCode::MissingFeatures, slide_id);
        }
        return read_features(path);
    };
}

namespace {

bool is_run_failure(ErrorCode code) {
    return code == ErrorCode::NumericalError || code == ErrorCode::InfeasibleSplit || code == ErrorCode::InfeasibleTask ||
           code == ErrorCode::UndefinedMetric;
}

std::filesystem::path run_path(const std::filesystem::path& dir, int split, int run) {
    return dir / fmt::format("split{:02d}_run{}.json", split, run);
}

} // namespace

MetricTable run_benchmark(const TaskSpec& task, const SplitPlan& plan, const SlideManifest& manifest,
                          const std::string& encoder_id, const FeatureLoader& loader, const BenchmarkOptions& options) {
    task.validate();
    if (plan.task_id != task.task_id) {
        fail(ErrorCode::InvalidInput, "run_benchmark: plan belongs to task " + plan.task_id);
    }
    if (task.type == TaskType::TileLevel && options.tile_labels == nullptr) {
        fail(ErrorCode::InvalidInput, "run_benchmark: tile-level task without tile labels");
    }

    std::set<std::string> needed;
    for (const auto& s : plan.splits) {
        needed.insert(s.train_ids.begin(), s.train_ids.end());
        needed.insert(s.val_ids.begin(), s.val_ids.end());
    }
    const auto records = index_manifest(manifest);

    std::map<std::string, FeatureMatrix> features;
    std::map<std::string, Bag> bags;
    std::map<std::string, int> class_of;
    std::uint32_t dim = 0;
    for (const auto& id : needed) {
        const auto rec = records.find(id);
        if (rec == records.end()) {
            fail(ErrorCode::InvalidInput, "run_benchmark: slide " + id + " is not in the manifest");
        }
        auto m = loader(encoder_id, id);
        if (dim == 0) {
            dim = m.dim;
        } else if (m.dim != dim) {
            fail(ErrorCode::ShapeError, fmt::format("encoder {}: slide {} has dim {}, expected {}", encoder_id, id, m.dim, dim));
        }
        if (task.type == TaskType::TileLevel) {
            features.emplace(id, std::move(m));
            continue;
        }
        const auto value = manifest.label(*rec->second, task.label_column);
        if (!value) {
            fail(ErrorCode::InvalidInput, "run_benchmark: slide " + id + " has no label");
        }
        double target = 0.0;
        if (task.type == TaskType::Regression) {
            target = parse_regression_target(*value, id);
        } else {
            const int cls = parse_class_label(*value, task.classes, id);
            class_of[id] = cls;
            target = cls;
        }
        bags.emplace(id, to_bag(m, target));
    }

    const auto jobs = plan.splits.size() * kRunsPerSplit;
    std::vector<RunRecord> results(jobs);
    parallel_for(jobs, options.workers, [&](std::size_t j) {
        const int split = static_cast<int>(j / kRunsPerSplit);
        const int run = static_cast<int>(j % kRunsPerSplit);
        if (options.run_dir) {
            const auto path = run_path(*options.run_dir, split, run);
            if (std::filesystem::exists(path)) {
                results[j] = RunRecord::from_json(read_text(path), path.string());
                return;
            }
        }
        RunRecord rec;
        rec.split = split;
        rec.run = run;
        const auto& sp = plan.splits[static_cast<std::size_t>(split)];
        const auto seed = run_seed(task.task_id, options.seed, split, run);
        try {
            double value = 0.0;
            if (task.type == TaskType::TileLevel) {
                std::vector<const FeatureMatrix*> tr;
                std::vector<const FeatureMatrix*> va;
                for (const auto& id : sp.train_ids) tr.push_back(&features.at(id));
                for (const auto& id : sp.val_ids) va.push_back(&features.at(id));
                const auto train = gather_labeled_tiles(tr, *options.tile_labels);
                const auto val = gather_labeled_tiles(va, *options.tile_labels);
                value = probe_train(train, val, task.classes, seed, options.probe).val_macro_auc;
            } else {
                BagRefs train;
                BagRefs val;
                if (task.type == TaskType::Regression) {
                    for (const auto& id : sp.train_ids) train.push_back(&bags.at(id));
                } else {
                    Rng rng(hash_combine(seed, "balance"));
                    std::vector<int> labels;
                    for (const auto& id : sp.train_ids) labels.push_back(class_of.at(id));
                    for (const auto& id : balance_classes(sp.train_ids, labels, task.classes, rng, options.balance_target)) {
                        train.push_back(&bags.at(id));
                    }
                }
                for (const auto& id : sp.val_ids) val.push_back(&bags.at(id));
                const auto kind = task.type == TaskType::Regression ? TaskKind::Regression : TaskKind::Classification;
                auto opts = options.gma;
                opts.track_curve = false;
                const auto result = train_slide_model(train, val, kind, task.classes, seed, opts);
                value = kind == TaskKind::Regression ? result.val_rmse_original : result.val_metric;
            }
            if (!std::isfinite(value)) {
                fail(ErrorCode::NumericalError, "non-finite validation metric");
            }
            rec.ok = true;
            rec.value = value;
        } catch (const Error& e) {
            if (!is_run_failure(e.code())) {
                throw;
            }
            rec.ok = false;
            rec.error = fmt::format("{}: {}", to_string(e.code()), e.what());
        }
        if (options.run_dir) {
            write_text_atomic(run_path(*options.run_dir, split, run), rec.to_json());
        }
        results[j] = std::move(rec);
    });

    MetricTable table;
    table.task_id = task.task_id;
    table.encoder_id = encoder_id;
    table.metric = task.metric_name();
    table.higher_is_better = task.higher_is_better();
    table.plan_hash = plan.hash();
    for (std::size_t s = 0; s < plan.splits.size(); ++s) {
        const auto& r0 = results[s * kRunsPerSplit];
        const auto& r1 = results[s * kRunsPerSplit + 1];
        SplitResult sr;
        if (r0.ok) sr.run0 = r0.value;
        if (r1.ok) sr.run1 = r1.value;
        if (r0.ok && r1.ok) sr.value = (r0.value + r1.value) / 2.0;
        table.splits.push_back(sr);
    }
    table.summarize();
    return table;
}

} // namespace milbench

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "milbench/error.hpp"
#include "milbench/io.hpp"
#include "milbench/mccv.hpp"
#include "milbench/synthbench.hpp"

using namespace milbench;
namespace fs = std::filesystem;

namespace {

SlideManifest plain_manifest(int n, int slides_per_patient) {
    SlideManifest m;
    m.label_columns = {"y"};
    for (int i = 0; i < n; ++i) {
        SlideRecord r;
        r.slide_id = "s" + std::to_string(1000 + i);
        if (slides_per_patient > 0) r.patient_id = "p" + std::to_string(i / slides_per_patient);
        r.cohort = i % 10 == 9 ? "other" : "main";
        r.labels["y"] = std::to_string(i % 2);
        m.slides.push_back(r);
    }
    return m;
}

TaskSpec binary_task(const std::string& cohort = "") {
    TaskSpec t;
    t.task_id = "t";
    t.type = TaskType::Binary;
    t.label_column = "y";
    t.cohort = cohort;
    return t;
}

FeatureLoader memory_loader(const SynthDataset& data) {
    return [&data](const std::string&, const std::string& slide) {
        for (const auto& f : data.features) {
            if (f.slide_id == slide) return f;
        }
        fail(ErrorCode::MissingFeatures, slide);
    };
}

SynthSpec small_spec(SynthKind kind) {
    SynthSpec s;
    s.kind = kind;
    s.n_slides = 30;
    s.min_tiles = 5;
    s.max_tiles = 8;
    s.dim = 4;
    s.signal_fraction = 0.3;
    return s;
}

BenchmarkOptions quick_options() {
    BenchmarkOptions o;
    o.gma.hidden = 4;
    o.gma.epochs = 2;
    o.probe.epochs = 2;
    o.seed = 3;
    return o;
}

} // namespace

TEST_CASE("slide-level splits are 80/20") {
    const auto m = plain_manifest(100, 0);
    const auto plan = make_splits(m, binary_task(), 1);
    CHECK(plan.grouping == SplitGrouping::Patient);
    REQUIRE(plan.splits.size() == kSplitCount);
    for (const auto& s : plan.splits) {
        CHECK(s.train_ids.size() == 80);
        CHECK(s.val_ids.size() == 20);
        CHECK(std::is_sorted(s.train_ids.begin(), s.train_ids.end()));
        std::set<std::string> all(s.train_ids.begin(), s.train_ids.end());
        all.insert(s.val_ids.begin(), s.val_ids.end());
        CHECK(all.size() == 100);
    }
    CHECK(plan.splits[0] != plan.splits[1]);
}

TEST_CASE("patient groups never straddle train and validation") {
    for (int per : {1, 2, 3, 5}) {
        const auto m = plain_manifest(97, per);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto plan = make_splits(m, binary_task(), seed);
            for (const auto& s : plan.splits) {
                std::set<std::string> train_patients;
                for (const auto& id : s.train_ids) train_patients.insert(m.find(id)->patient_id);
                for (const auto& id : s.val_ids) REQUIRE(train_patients.count(m.find(id)->patient_id) == 0);
            }
        }
    }
}

TEST_CASE("cohort filter and plan serialization") {
    const auto m = plain_manifest(50, 2);
    const auto plan = make_splits(m, binary_task("main"), 4);
    for (const auto& s : plan.splits) {
        for (const auto& id : s.train_ids) REQUIRE(m.find(id)->cohort == "main");
        for (const auto& id : s.val_ids) REQUIRE(m.find(id)->cohort == "main");
    }
    const auto again = make_splits(m, binary_task("main"), 4);
    CHECK(again.to_json() == plan.to_json());
    CHECK(again.hash() == plan.hash());
    const auto back = SplitPlan::from_json(plan.to_json());
    CHECK(back == plan);
    CHECK(back.to_json() == plan.to_json());
    CHECK(make_splits(m, binary_task("main"), 5).hash() != plan.hash());
}

TEST_CASE("infeasible tasks") {
    auto tiny = plain_manifest(4, 0);
    CHECK_THROWS_AS(make_splits(tiny, binary_task(), 1), Error);
    auto one_class = plain_manifest(20, 0);
    for (auto& s : one_class.slides) s.labels["y"] = "1";
    one_class.slides[0].labels["y"] = "0";
    try {
        make_splits(one_class, binary_task(), 1);
        FAIL("expected InfeasibleTask");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InfeasibleTask);
    }
}

TEST_CASE("class labels must be integer indices") {
    CHECK(parse_class_label("2", 3, "s") == 2);
    CHECK_THROWS_AS(parse_class_label("3", 3, "s"), Error);
    CHECK_THROWS_AS(parse_class_label("1.0", 3, "s"), Error);
    CHECK_THROWS_AS(parse_class_label("", 3, "s"), Error);
    CHECK(parse_regression_target("-2.5", "s") == -2.5);
    CHECK_THROWS_AS(parse_regression_target("nan", "s"), Error);
}

TEST_CASE("rebalancing examples") {
    Rng rng(1);
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (int i = 0; i < 70; ++i) {
        ids.push_back("a" + std::to_string(i));
        labels.push_back(0);
    }
    for (int i = 0; i < 30; ++i) {
        ids.push_back("b" + std::to_string(i));
        labels.push_back(1);
    }
    const auto out = balance_classes(ids, labels, 2, rng);
    CHECK(out.size() == 60);
    std::set<std::string> distinct(out.begin(), out.end());
    CHECK(distinct.size() == 60);
    int zeros = 0;
    for (const auto& id : out) zeros += id[0] == 'a' ? 1 : 0;
    CHECK(zeros == 30);

    Rng up(2);
    const auto over = balance_classes(ids, labels, 2, up, 50);
    CHECK(over.size() == 100);
    int ones = 0;
    for (const auto& id : over) ones += id[0] == 'b' ? 1 : 0;
    CHECK(ones == 50);

    std::vector<int> missing(ids.size(), 0);
    Rng r3(3);
    try {
        balance_classes(ids, missing, 2, r3);
        FAIL("expected InfeasibleSplit");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InfeasibleSplit);
    }
}

TEST_CASE("rebalanced histograms are exactly uniform") {
    std::mt19937 gen(12);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + static_cast<int>(gen() % 4);
        std::vector<std::string> ids;
        std::vector<int> labels;
        for (int c = 0; c < k; ++c) {
            const int count = 1 + static_cast<int>(gen() % 40);
            for (int i = 0; i < count; ++i) {
                ids.push_back(std::to_string(c) + "_" + std::to_string(i));
                labels.push_back(c);
            }
        }
        Rng rng(gen());
        std::optional<int> target;
        if (trial % 3 == 0) target = 1 + static_cast<int>(gen() % 30);
        const auto out = balance_classes(ids, labels, k, rng, target);
        std::map<int, int> hist;
        for (const auto& id : out) hist[std::stoi(id.substr(0, id.find('_')))]++;
        REQUIRE(hist.size() == static_cast<std::size_t>(k));
        for (const auto& [c, n] : hist) REQUIRE(n == hist.begin()->second);
        if (target) REQUIRE(hist.begin()->second == *target);
    }
}

TEST_CASE("run seeds differ by split and run") {
    std::set<std::uint64_t> seen;
    for (int s = 0; s < kSplitCount; ++s) {
        for (int r = 0; r < kRunsPerSplit; ++r) seen.insert(run_seed("t", 7, s, r));
    }
    CHECK(seen.size() == kSplitCount * kRunsPerSplit);
    CHECK(run_seed("t", 7, 0, 0) == run_seed("t", 7, 0, 0));
    CHECK(run_seed("u", 7, 0, 0) != run_seed("t", 7, 0, 0));
}

TEST_CASE("metric table csv round trip and summary") {
    MetricTable t;
    t.task_id = "task";
    t.encoder_id = "enc";
    t.metric = "auc";
    t.plan_hash = "abc";
    for (int s = 0; s < 4; ++s) {
        SplitResult r;
        r.run0 = 0.5 + 0.1 * s;
        r.run1 = 0.6 + 0.1 * s;
        r.value = (*r.run0 + *r.run1) / 2.0;
        t.splits.push_back(r);
    }
    t.splits[2].run1.reset();
    t.splits[2].value.reset();
    t.summarize();
    CHECK(t.valid_splits == 3);
    CHECK_FALSE(t.complete());
    const std::vector<double> v{0.55, 0.65, 0.85};
    CHECK(t.mean == doctest::Approx((v[0] + v[1] + v[2]) / 3.0));
    double ss = 0.0;
    for (double x : v) ss += (x - t.mean) * (x - t.mean);
    CHECK(t.std == doctest::Approx(std::sqrt(ss / 2.0)));

    const auto back = MetricTable::from_csv(t.to_csv());
    CHECK(back.to_csv() == t.to_csv());
    CHECK(back.valid_splits == 3);
    CHECK_FALSE(back.splits[2].value.has_value());
    CHECK(back.splits[2].run0 == t.splits[2].run0);

    const auto dir = fs::temp_directory_path() / "milbench_test_table";
    write_metric_table(t, dir / "t.csv", Provenance{"hash", 7, {}});
    CHECK(fs::exists(sidecar_path(dir / "t.csv")));
    const auto read = read_metric_table(dir / "t.csv");
    CHECK(read.metric == "auc");
    CHECK(read.plan_hash == "abc");
    CHECK(read.higher_is_better);
    fs::remove_all(dir);
}

TEST_CASE("benchmark is deterministic and reuses stored runs") {
    const auto data = gen_mil_dataset(small_spec(SynthKind::MilBinary));
    TaskSpec task = binary_task();
    task.label_column = "label";
    const auto plan = make_splits(data.manifest, task, 3);
    auto opts = quick_options();
    opts.workers = 3;
    const auto a = run_benchmark(task, plan, data.manifest, "synth", memory_loader(data), opts);
    opts.workers = 1;
    const auto b = run_benchmark(task, plan, data.manifest, "synth", memory_loader(data), opts);
    CHECK(a.to_csv() == b.to_csv());
    CHECK(a.complete());
    CHECK(a.plan_hash == plan.hash());
    for (const auto& s : a.splits) {
        REQUIRE(*s.value >= 0.0);
        REQUIRE(*s.value <= 1.0);
    }

    const auto dir = fs::temp_directory_path() / "milbench_test_runs";
    fs::remove_all(dir);
    opts.run_dir = dir;
    const auto c = run_benchmark(task, plan, data.manifest, "synth", memory_loader(data), opts);
    CHECK(c.to_csv() == a.to_csv());
    CHECK(fs::exists(dir / "split00_run0.json"));
    // a stored record wins over recomputation
    RunRecord fake{0, 0, true, 0.25, ""};
    write_text_atomic(dir / "split00_run0.json", fake.to_json());
    const auto d = run_benchmark(task, plan, data.manifest, "synth", memory_loader(data), opts);
    CHECK(*d.splits[0].run0 == 0.25);
    fs::remove_all(dir);
}

TEST_CASE("missing features abort before training") {
    const auto data = gen_mil_dataset(small_spec(SynthKind::MilBinary));
    TaskSpec task = binary_task();
    task.label_column = "label";
    const auto plan = make_splits(data.manifest, task, 3);
    const FeatureLoader loader = [&](const std::string& enc, const std::string& slide) {
        if (slide == "S0003") fail(ErrorCode::MissingFeatures, slide);
        return memory_loader(data)(enc, slide);
    };
    try {
        run_benchmark(task, plan, data.manifest, "synth", loader, quick_options());
        FAIL("expected MissingFeatures");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingFeatures);
    }
}

TEST_CASE("regression and tile-level benchmarks") {
    const auto reg = gen_mil_dataset(small_spec(SynthKind::Regression));
    TaskSpec rt;
    rt.task_id = "r";
    rt.type = TaskType::Regression;
    rt.label_column = "label";
    const auto rplan = make_splits(reg.manifest, rt, 1);
    const auto rtab = run_benchmark(rt, rplan, reg.manifest, "synth", memory_loader(reg), quick_options());
    CHECK(rtab.metric == "rmse");
    CHECK_FALSE(rtab.higher_is_better);
    for (const auto& s : rtab.splits) {
        if (s.value) REQUIRE(*s.value >= 0.0);
    }

    auto spec = small_spec(SynthKind::TileLevel);
    spec.classes = 3;
    spec.min_tiles = 16;
    spec.max_tiles = 25;
    const auto tl = gen_mil_dataset(spec);
    TaskSpec tt;
    tt.task_id = "seg";
    tt.type = TaskType::TileLevel;
    tt.classes = 3;
    tt.label_column = "label";
    auto opts = quick_options();
    CHECK_THROWS_AS(run_benchmark(tt, make_splits(tl.manifest, tt, 1), tl.manifest, "synth", memory_loader(tl), opts),
                    Error);
    opts.tile_labels = &tl.tile_labels;
    const auto ttab = run_benchmark(tt, make_splits(tl.manifest, tt, 1), tl.manifest, "synth", memory_loader(tl), opts);
    CHECK(ttab.metric == "macro_auc");
    CHECK(ttab.complete());
}

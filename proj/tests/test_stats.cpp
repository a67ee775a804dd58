#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "milbench/error.hpp"
#include "milbench/stats.hpp"
#include "oracles.hpp"

using namespace milbench;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidInput;
}

// Hand-built comparison with fixed adjusted p-values; encoders already in mean order.
TaskComparison fixed(const std::vector<double>& means, const std::vector<std::vector<double>>& p) {
    TaskComparison t;
    t.task_id = "t";
    const auto k = means.size();
    for (std::size_t i = 0; i < k; ++i) t.encoders.push_back(std::string(1, static_cast<char>('a' + i)));
    t.means = means;
    t.p_raw = p;
    t.p_adj = p;
    t.degenerate.assign(k, std::vector<bool>(k, false));
    for (int s = 0; s < 20; ++s) t.used_splits.push_back(s);
    return t;
}

// Three encoders over 20 splits: B edges A without significance, C trails both by 0.1.
std::vector<EncoderScores> three_encoders() {
    std::vector<double> a(20);
    std::vector<double> b(20);
    std::vector<double> c(20);
    for (int i = 0; i < 20; ++i) {
        a[i] = 0.9 + 0.001 * i;
        const double d = (i % 2 == 0 ? 1.0 : -1.0) * 0.001 * (i + 1);
        b[i] = a[i] - d;
        c[i] = a[i] - 0.1 - 0.0001 * i;
    }
    return {{"A", a}, {"B", b}, {"C", c}};
}

} // namespace

TEST_CASE("five positive differences") {
    const std::vector<double> x{1.1, 2.2, 3.3, 4.4, 5.5};
    const std::vector<double> y{1.0, 2.0, 3.0, 4.0, 5.0};
    const auto r = wilcoxon_signed_rank(x, y);
    CHECK(r.p_two_sided == 0.0625);
    CHECK(r.w == 0.0);
    CHECK(r.n_effective == 5);
}

TEST_CASE("wilcoxon input errors") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    CHECK(code_of([&] { wilcoxon_signed_rank(x, x); }) == ErrorCode::DegeneratePair);
    const std::vector<double> four{1, 2, 3, 4};
    CHECK(code_of([&] { wilcoxon_signed_rank(four, four); }) == ErrorCode::InvalidInput);
    const std::vector<double> bad{1, 2, 3, 4, std::nan("")};
    CHECK(code_of([&] { wilcoxon_signed_rank(x, bad); }) == ErrorCode::InvalidInput);
}

TEST_CASE("exact p matches enumeration for small samples with ties and zeros") {
    std::mt19937 gen(21);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 5 + static_cast<int>(gen() % 8);
        std::vector<double> x(n);
        std::vector<double> y(n);
        for (int i = 0; i < n; ++i) {
            x[i] = static_cast<double>(gen() % 7);
            y[i] = static_cast<double>(gen() % 7);
        }
        if (std::equal(x.begin(), x.end(), y.begin())) continue;
        REQUIRE(wilcoxon_signed_rank(x, y).p_two_sided == doctest::Approx(oracle::wilcoxon_p(x, y)).epsilon(1e-12));
    }
}

TEST_CASE("exact p at n=20 matches the 2^20 enumeration") {
    std::mt19937 gen(22);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<double> x(20);
        std::vector<double> y(20);
        for (int i = 0; i < 20; ++i) {
            x[i] = normal(gen) + 0.3;
            y[i] = normal(gen);
        }
        REQUIRE(std::fabs(wilcoxon_signed_rank(x, y).p_two_sided - oracle::wilcoxon_p(x, y)) <= 1e-12);
    }
}

TEST_CASE("normal approximation beyond the exact limit") {
    std::vector<double> x(40);
    std::vector<double> y(40, 0.0);
    for (int i = 0; i < 40; ++i) x[i] = (i % 3 == 0 ? -1.0 : 1.0) * (i + 1);
    const auto r = wilcoxon_signed_rank(x, y);
    CHECK(r.n_effective == 40);
    CHECK(r.p_two_sided > 0.0);
    CHECK(r.p_two_sided <= 1.0);
    // 40 positive differences: far into the tail but still positive
    std::vector<double> pos(40);
    for (int i = 0; i < 40; ++i) pos[i] = i + 1.0;
    const auto tail = wilcoxon_signed_rank(pos, y);
    CHECK(tail.p_two_sided > 0.0);
    CHECK(tail.p_two_sided < 1e-6);
}

TEST_CASE("bh worked examples") {
    const std::vector<double> p{0.01, 0.02, 0.03, 0.04};
    CHECK(bh_adjust(p) == std::vector<double>{0.04, 0.04, 0.04, 0.04});
    const std::vector<double> one{0.3};
    CHECK(bh_adjust(one) == one);
    const std::vector<double> same{0.2, 0.2, 0.2};
    CHECK(bh_adjust(same) == same);
    const std::vector<double> zero{0.0, 0.5};
    CHECK(code_of([&] { bh_adjust(zero); }) == ErrorCode::InvalidInput);
    const std::vector<double> big{1.5};
    CHECK(code_of([&] { bh_adjust(big); }) == ErrorCode::InvalidInput);
}

TEST_CASE("bh matches the definition and is monotone") {
    std::mt19937 gen(23);
    std::uniform_real_distribution<double> u(1e-6, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        const int m = 1 + static_cast<int>(gen() % 15);
        std::vector<double> p(m);
        for (auto& v : p) v = trial % 4 == 0 ? std::ceil(u(gen) * 5.0) / 5.0 : u(gen);
        const auto q = bh_adjust(p);
        const auto ref = oracle::bh(p);
        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
        for (int i = 0; i < m; ++i) {
            REQUIRE(q[i] == doctest::Approx(ref[i]).epsilon(1e-14));
            REQUIRE(q[i] >= p[i]);
            REQUIRE(q[i] <= 1.0);
        }
        for (int i = 1; i < m; ++i) REQUIRE(q[order[i]] >= q[order[i - 1]]);
    }
}

TEST_CASE("greedy ranking on fixed p-values") {
    const std::vector<std::vector<double>> none{{1, 0.5, 0.5}, {0.5, 1, 0.5}, {0.5, 0.5, 1}};
    auto all_tied = fixed({0.9, 0.8, 0.7}, none);
    rank_with_significance(all_tied);
    CHECK(all_tied.ranks == std::vector<int>{1, 1, 1});

    const std::vector<std::vector<double>> all{{1, 0.01, 0.01}, {0.01, 1, 0.01}, {0.01, 0.01, 1}};
    auto apart = fixed({0.9, 0.8, 0.7}, all);
    rank_with_significance(apart);
    CHECK(apart.ranks == std::vector<int>{1, 2, 3});

    // only the extremes differ: the middle joins the leader, the last starts group 2
    const std::vector<std::vector<double>> ends{{1, 0.3, 0.01}, {0.3, 1, 0.3}, {0.01, 0.3, 1}};
    auto extremes = fixed({0.9, 0.8, 0.7}, ends);
    rank_with_significance(extremes);
    CHECK(extremes.ranks == std::vector<int>{1, 1, 2});

    // a new group is measured against its own leader
    const std::vector<std::vector<double>> four{
        {1, 0.01, 0.01, 0.01}, {0.01, 1, 0.2, 0.01}, {0.01, 0.2, 1, 0.01}, {0.01, 0.01, 0.01, 1}};
    auto chain = fixed({0.9, 0.8, 0.75, 0.6}, four);
    rank_with_significance(chain);
    CHECK(chain.ranks == std::vector<int>{1, 2, 2, 3});
}

TEST_CASE("win tie loss rules") {
    const std::vector<std::vector<double>> p{{1, 0.001, 0.2}, {0.001, 1, 0.01}, {0.2, 0.01, 1}};
    const auto t = fixed({0.9, 0.8, 0.7}, p);
    const auto w = win_tie_loss(t, "a");
    CHECK(w.verdict == Verdict::Win);
    CHECK(w.competitor == "b");
    CHECK(w.p_adj == 0.001);
    CHECK(win_tie_loss(t, "b").verdict == Verdict::Loss);
    // c's best competitor is a, p=0.2
    const auto c = win_tie_loss(t, "c");
    CHECK(c.competitor == "a");
    CHECK(c.verdict == Verdict::Tie);
}

TEST_CASE("three-encoder comparison traced by hand") {
    auto task = pairwise_tests("t", three_encoders(), true);
    REQUIRE(task.encoders == std::vector<std::string>{"B", "A", "C"});
    const auto b = task.index_of("B");
    const auto a = task.index_of("A");
    const auto c = task.index_of("C");
    // every C difference has the same sign: two of 2^20 sign patterns are as extreme
    CHECK(task.p_raw[b][c] == std::ldexp(1.0, -19));
    CHECK(task.p_raw[a][c] == std::ldexp(1.0, -19));
    const auto three = three_encoders();
    const double p_ab = oracle::wilcoxon_p(three[0].values, three[1].values);
    CHECK(task.p_raw[a][b] == doctest::Approx(p_ab).epsilon(1e-12));
    CHECK(p_ab > 0.5);

    adjust_task_family(task);
    CHECK(task.p_adj[b][c] == doctest::Approx(1.5 * std::ldexp(1.0, -19)).epsilon(1e-14));
    CHECK(task.p_adj[a][b] == doctest::Approx(p_ab).epsilon(1e-12));
    rank_with_significance(task);
    CHECK(task.ranks == std::vector<int>{1, 1, 2});

    CHECK(win_tie_loss(task, "C").verdict == Verdict::Loss);
    CHECK(win_tie_loss(task, "B").verdict == Verdict::Tie);
    CHECK(win_tie_loss(task, "A").verdict == Verdict::Tie);

    const auto cells = significance_matrix(task);
    REQUIRE(cells.size() == 6);
    for (const auto& cell : cells) {
        const bool involves_c = cell.row == "C" || cell.col == "C";
        if (!involves_c) {
            CHECK(cell.sign == Sign::None);
            CHECK(cell.bucket == "ns");
        } else {
            CHECK(cell.sign == (cell.row == "C" ? Sign::Worse : Sign::Better));
            CHECK(cell.bucket == "p<0.01");
        }
    }
}

TEST_CASE("ranking ignores input order") {
    auto scores = three_encoders();
    auto base = pairwise_tests("t", scores, true);
    adjust_task_family(base);
    rank_with_significance(base);
    std::reverse(scores.begin(), scores.end());
    auto flipped = pairwise_tests("t", scores, true);
    adjust_task_family(flipped);
    rank_with_significance(flipped);
    CHECK(flipped.encoders == base.encoders);
    CHECK(flipped.ranks == base.ranks);
    CHECK(flipped.p_adj == base.p_adj);
}

TEST_CASE("lower-is-better tasks flip the order") {
    auto task = pairwise_tests("r", three_encoders(), false);
    CHECK(task.encoders == std::vector<std::string>{"C", "A", "B"});
    adjust_task_family(task);
    rank_with_significance(task);
    CHECK(task.ranks == std::vector<int>{1, 2, 2});
}

TEST_CASE("identical distributions are all ties") {
    std::vector<double> v(20);
    for (int i = 0; i < 20; ++i) v[i] = 0.5 + 0.01 * i;
    auto task = pairwise_tests("t", {{"x", v}, {"y", v}, {"z", v}}, true);
    adjust_task_family(task);
    rank_with_significance(task);
    CHECK(task.ranks == std::vector<int>{1, 1, 1});
    CHECK(task.encoders == std::vector<std::string>{"x", "y", "z"});
    for (const auto& cell : significance_matrix(task)) {
        CHECK(cell.sign == Sign::None);
        CHECK(cell.p_adj == 1.0);
    }
    CHECK(win_tie_loss(task, "x").verdict == Verdict::Tie);
}

TEST_CASE("signs are antisymmetric and agree with verdicts") {
    std::mt19937 gen(24);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<EncoderScores> scores;
        for (int e = 0; e < 4; ++e) {
            EncoderScores s{"e" + std::to_string(e), {}};
            for (int i = 0; i < 20; ++i) s.values.push_back(0.7 + 0.02 * e * (trial % 3) + 0.03 * normal(gen));
            scores.push_back(s);
        }
        auto task = pairwise_tests("t", scores, true);
        adjust_task_family(task);
        rank_with_significance(task);
        const auto cells = significance_matrix(task);
        for (const auto& rc : cells) {
            const auto it = std::find_if(cells.begin(), cells.end(),
                                         [&](const SigCell& x) { return x.row == rc.col && x.col == rc.row; });
            REQUIRE(it != cells.end());
            const Sign mirrored = rc.sign == Sign::Better ? Sign::Worse : rc.sign == Sign::Worse ? Sign::Better : Sign::None;
            REQUIRE(it->sign == mirrored);
            REQUIRE(it->p_adj == rc.p_adj);
            const std::string bucket = rc.p_adj < 0.01 ? "p<0.01" : rc.p_adj < 0.05 ? "p<0.05" : "ns";
            REQUIRE(rc.bucket == bucket);
        }
        for (const auto& focal : task.encoders) {
            const auto v = win_tie_loss(task, focal);
            const auto cell = std::find_if(cells.begin(), cells.end(),
                                           [&](const SigCell& x) { return x.row == focal && x.col == v.competitor; });
            REQUIRE(cell != cells.end());
            const Verdict expected = cell->sign == Sign::Better ? Verdict::Win
                                     : cell->sign == Sign::Worse ? Verdict::Loss
                                                                 : Verdict::Tie;
            REQUIRE(v.verdict == expected);
        }
        for (std::size_t i = 1; i < task.ranks.size(); ++i) REQUIRE(task.ranks[i] >= task.ranks[i - 1]);
        REQUIRE(task.ranks.front() == 1);
    }
}

TEST_CASE("overall mean rank recomputes from per-task ranks") {
    const std::vector<std::vector<double>> tied{{1, 0.5}, {0.5, 1}};
    const std::vector<std::vector<double>> apart{{1, 0.01}, {0.01, 1}};
    auto t1 = fixed({0.9, 0.8}, apart);
    auto t2 = fixed({0.9, 0.8}, tied);
    auto t3 = fixed({0.9, 0.8, 0.7}, {{1, 0.01, 0.01}, {0.01, 1, 0.01}, {0.01, 0.01, 1}});
    t2.encoders = {"b", "a"};
    for (auto* t : {&t1, &t2, &t3}) rank_with_significance(*t);
    const auto overall = overall_mean_rank({t1, t2, t3});
    CHECK(overall.at("a") == doctest::Approx((1.0 + 1.0 + 1.0) / 3.0));
    CHECK(overall.at("b") == doctest::Approx((2.0 + 1.0 + 2.0) / 3.0));
    CHECK(overall.at("c") == 3.0);
}

namespace {

MetricTable table(const std::string& task, const EncoderScores& s, const std::string& plan = "plan") {
    MetricTable t;
    t.task_id = task;
    t.encoder_id = s.encoder_id;
    t.metric = "auc";
    t.plan_hash = plan;
    for (double v : s.values) t.splits.push_back(SplitResult{v, v, v});
    t.summarize();
    return t;
}

} // namespace

TEST_CASE("compare_tables assembles the report") {
    std::vector<MetricTable> tables;
    for (const auto& s : three_encoders()) tables.push_back(table("t1", s));
    for (const auto& s : three_encoders()) tables.push_back(table("t2", s));
    // one failed split for C on t2 leaves 19 paired splits
    tables.back().splits[4] = SplitResult{0.5, std::nullopt, std::nullopt};
    tables.back().summarize();
    tables.push_back(table("lonely", three_encoders()[0]));

    const auto report = compare_tables(tables);
    REQUIRE(report.tasks.size() == 2);
    CHECK(report.skipped.count("lonely") == 1);
    const auto& used = report.tasks[1].used_splits;
    CHECK(used.size() == 19);
    CHECK(std::find(used.begin(), used.end(), 4) == used.end());
    CHECK(report.overall_mean_rank.at("C") == 2.0);
    CHECK(report.overall_mean_rank.at("A") == 1.0);
    CHECK(report.rank_heatmap_csv().rfind("task,encoder,mean,rank\n", 0) == 0);
    CHECK(report.sig_matrix_csv().rfind("task,row,col,sign,p_adj\n", 0) == 0);
    CHECK(compare_tables(tables).to_json() == report.to_json());

    auto global = CompareOptions{};
    global.scope = BhScope::Global;
    const auto g = compare_tables(tables, global);
    const auto& t = g.tasks[0];
    // one family of six: 2^-19 twice (t1), 2^-18 twice (t2, 19 splits), two large p_AB
    // ranks 1-2 give 2^-19 * 6/2, ranks 3-4 give 2^-18 * 6/4; both equal 3 * 2^-19
    CHECK(t.p_adj[t.index_of("B")][t.index_of("C")] == doctest::Approx(3.0 * std::ldexp(1.0, -19)).epsilon(1e-12));

    auto short_tables = tables;
    short_tables.back() = table("t1", three_encoders()[0], "otherplan");
    short_tables.back().encoder_id = "D";
    const auto mismatch = compare_tables(short_tables);
    CHECK(mismatch.skipped.count("t1") == 1);

    auto dup = tables;
    dup.push_back(tables[0]);
    CHECK(code_of([&] { compare_tables(dup); }) == ErrorCode::InvalidInput);
}

TEST_CASE("too few common splits skips the task") {
    std::vector<MetricTable> tables;
    for (const auto& s : three_encoders()) tables.push_back(table("t", s));
    for (int i = 0; i < 6; ++i) tables[0].splits[i] = SplitResult{};
    tables[0].summarize();
    const auto report = compare_tables(tables);
    CHECK(report.tasks.empty());
    CHECK(report.skipped.count("t") == 1);
}

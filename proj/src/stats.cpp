#include "milbench/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "milbench/error.hpp"

namespace milbench {

using nlohmann::json;

namespace {

struct SignedRanks {
    /// Twice the midrank of each |d|, so ties stay integral.
    std::vector<long> doubled;
    std::vector<bool> positive;
    /// Sizes of tie groups among |d|.
    std::vector<long> ties;
};

SignedRanks rank_differences(std::span<const double> diffs) {
    const std::size_t n = diffs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::fabs(diffs[a]) < std::fabs(diffs[b]); });
    SignedRanks out;
    out.doubled.assign(n, 0);
    out.positive.assign(n, false);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && std::fabs(diffs[order[j + 1]]) == std::fabs(diffs[order[i]])) {
            ++j;
        }
        for (std::size_t k = i; k <= j; ++k) {
            out.doubled[order[k]] = static_cast<long>(i + j + 2);
        }
        out.ties.push_back(static_cast<long>(j - i + 1));
        i = j + 1;
    }
    for (std::size_t k = 0; k < n; ++k) {
        out.positive[k] = diffs[k] > 0.0;
    }
    return out;
}

double exact_p(const SignedRanks& r) {
    long total = 0;
    long w_plus = 0;
    for (std::size_t i = 0; i < r.doubled.size(); ++i) {
        total += r.doubled[i];
        if (r.positive[i]) {
            w_plus += r.doubled[i];
        }
    }
    const long w_min = std::min(w_plus, total - w_plus);
    // counts[s] = number of sign assignments whose doubled W+ equals s
    std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (const long rank : r.doubled) {
        for (long s = reach; s >= 0; --s) {
            counts[static_cast<std::size_t>(s + rank)] += counts[static_cast<std::size_t>(s)];
        }
        reach += rank;
    }
    double tail = 0.0;
    for (long s = 0; s <= w_min; ++s) {
        tail += counts[static_cast<std::size_t>(s)];
    }
    const double p = 2.0 * tail / std::ldexp(1.0, static_cast<int>(r.doubled.size()));
    return std::min(1.0, p);
}

double normal_p(const SignedRanks& r, double w) {
    const auto n = static_cast<double>(r.doubled.size());
    const double mu = n * (n + 1.0) / 4.0;
    double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    for (const long t : r.ties) {
        const auto td = static_cast<double>(t);
        var -= (td * td * td - td) / 48.0;
    }
    const double z = (w - mu + 0.5) / std::sqrt(var);
    const double p = std::erfc(-z / std::sqrt(2.0));
    return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

} // namespace

double wilcoxon_exact_p(std::span<const double> diffs) {
    for (double d : diffs) {
        if (d == 0.0 || !std::isfinite(d)) {
            fail(ErrorCode::InvalidInput, "wilcoxon_exact_p: differences must be finite and nonzero");
        }
    }
    if (diffs.empty()) {
        return 1.0;
    }
    return exact_p(rank_differences(diffs));
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        fail(ErrorCode::InvalidInput, "wilcoxon: samples differ in length");
    }
    if (x.size() < 5) {
        fail(ErrorCode::InvalidInput, "wilcoxon: need at least five pairs");
    }
    std::vector<double> diffs;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
            fail(ErrorCode::InvalidInput, "wilcoxon: non-finite sample");
        }
        const double d = x[i] - y[i];
        if (d != 0.0) {
            diffs.push_back(d);
        }
    }
    if (diffs.empty()) {
        fail(ErrorCode::DegeneratePair, "wilcoxon: all differences are zero");
    }
    const auto ranks = rank_differences(diffs);
    long w_plus = 0;
    long total = 0;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
        total += ranks.doubled[i];
        if (ranks.positive[i]) {
            w_plus += ranks.doubled[i];
        }
    }
    WilcoxonResult out;
    out.n_effective = static_cast<int>(diffs.size());
    out.w = static_cast<double>(std::min(w_plus, total - w_plus)) / 2.0;
    out.p_two_sided = out.n_effective <= kExactWilcoxonLimit ? exact_p(ranks) : normal_p(ranks, out.w);
    return out;
}

std::vector<double> bh_adjust(std::span<const double> pvals) {
    const std::size_t m = pvals.size();
    for (double p : pvals) {
        if (!(p > 0.0 && p <= 1.0)) {
            fail(ErrorCode::InvalidInput, fmt::format("bh_adjust: p-value {} outside (0, 1]", p));
        }
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
    std::vector<double> out(m);
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const double p = pvals[order[k]];
        // at the top rank m / m is 1; skip the multiply so rounding cannot pull q below p
        const double q = k + 1 == m ? p : p * static_cast<double>(m) / static_cast<double>(k + 1);
        running = std::min(running, q);
        out[order[k]] = std::min(1.0, running);
    }
    return out;
}

std::string to_string(Sign s) {
    switch (s) {
    case Sign::Better: return "+";
    case Sign::Worse: return "-";
    case Sign::None: return "none";
    }
    return "none";
}

std::string to_string(Verdict v) {
    switch (v) {
    case Verdict::Win: return "win";
    case Verdict::Tie: return "tie";
    case Verdict::Loss: return "loss";
    }
    return "tie";
}

std::size_t TaskComparison::index_of(const std::string& encoder_id) const {
    const auto it = std::find(encoders.begin(), encoders.end(), encoder_id);
    if (it == encoders.end()) {
        fail(ErrorCode::InvalidInput, "task " + task_id + ": unknown encoder " + encoder_id);
    }
    return static_cast<std::size_t>(it - encoders.begin());
}

bool TaskComparison::better(std::size_t a, std::size_t b) const {
    return higher_is_better ? means[a] > means[b] : means[a] < means[b];
}

TaskComparison pairwise_tests(const std::string& task_id, std::vector<EncoderScores> scores, bool higher_is_better) {
    if (scores.size() < 2) {
        fail(ErrorCode::InvalidInput, "task " + task_id + ": need at least two encoders");
    }
    const std::size_t n = scores.front().values.size();
    for (const auto& s : scores) {
        if (s.values.size() != n) {
            fail(ErrorCode::InvalidInput, "task " + task_id + ": encoders have different split counts");
        }
    }
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        double sum = 0.0;
        for (double v : scores[i].values) {
            sum += v;
        }
        keyed.emplace_back(n == 0 ? 0.0 : sum / static_cast<double>(n), i);
    }
    std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return higher_is_better ? a.first > b.first : a.first < b.first;
        }
        return scores[a.second].encoder_id < scores[b.second].encoder_id;
    });

    TaskComparison t;
    t.task_id = task_id;
    t.higher_is_better = higher_is_better;
    std::vector<const std::vector<double>*> values;
    for (const auto& [mean, idx] : keyed) {
        t.encoders.push_back(scores[idx].encoder_id);
        t.means.push_back(mean);
        values.push_back(&scores[idx].values);
    }
    const std::size_t k = t.encoders.size();
    t.p_raw.assign(k, std::vector<double>(k, 1.0));
    t.degenerate.assign(k, std::vector<bool>(k, false));
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            try {
                const auto r = wilcoxon_signed_rank(*values[a], *values[b]);
                t.p_raw[a][b] = t.p_raw[b][a] = r.p_two_sided;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegeneratePair) {
                    throw;
                }
                t.degenerate[a][b] = t.degenerate[b][a] = true;
            }
        }
    }
    t.p_adj = t.p_raw;
    t.ranks.assign(k, 1);
    return t;
}

namespace {

// Applies BH across the non-degenerate upper-triangle pairs of several tasks at once.
void adjust_family(std::vector<TaskComparison*> tasks) {
    std::vector<double> raw;
    for (auto* t : tasks) {
        for (std::size_t a = 0; a < t->encoders.size(); ++a) {
            for (std::size_t b = a + 1; b < t->encoders.size(); ++b) {
                if (!t->degenerate[a][b]) {
                    raw.push_back(t->p_raw[a][b]);
                }
            }
        }
    }
    const auto adj = bh_adjust(raw);
    std::size_t next = 0;
    for (auto* t : tasks) {
        for (std::size_t a = 0; a < t->encoders.size(); ++a) {
            for (std::size_t b = a + 1; b < t->encoders.size(); ++b) {
                const double q = t->degenerate[a][b] ? 1.0 : adj[next++];
                t->p_adj[a][b] = t->p_adj[b][a] = q;
            }
        }
    }
}

} // namespace

void adjust_task_family(TaskComparison& task) { adjust_family({&task}); }

void rank_with_significance(TaskComparison& task, double alpha) {
    const std::size_t k = task.encoders.size();
    task.ranks.assign(k, 1);
    std::size_t leader = 0;
    int group = 1;
    for (std::size_t i = 1; i < k; ++i) {
        if (task.p_adj[i][leader] < alpha) {
            ++group;
            leader = i;
        }
        task.ranks[i] = group;
    }
}

WinTieLoss win_tie_loss(const TaskComparison& task, const std::string& focal, double alpha) {
    const std::size_t f = task.index_of(focal);
    if (task.encoders.size() < 2) {
        fail(ErrorCode::InvalidInput, "win_tie_loss: need at least two encoders");
    }
    // encoders are stored best first, so the first non-focal one is the best competitor
    const std::size_t c = f == 0 ? 1 : 0;
    WinTieLoss out;
    out.task_id = task.task_id;
    out.focal = focal;
    out.competitor = task.encoders[c];
    out.p_adj = task.p_adj[f][c];
    if (out.p_adj < alpha && task.better(f, c)) {
        out.verdict = Verdict::Win;
    } else if (out.p_adj < alpha && task.better(c, f)) {
        out.verdict = Verdict::Loss;
    }
    return out;
}

std::vector<SigCell> significance_matrix(const TaskComparison& task, double strong, double alpha) {
    std::vector<SigCell> cells;
    const std::size_t k = task.encoders.size();
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            if (r == c) {
                continue;
            }
            SigCell cell;
            cell.row = task.encoders[r];
            cell.col = task.encoders[c];
            cell.p_adj = task.p_adj[r][c];
            if (cell.p_adj < alpha) {
                if (task.better(r, c)) {
                    cell.sign = Sign::Better;
                } else if (task.better(c, r)) {
                    cell.sign = Sign::Worse;
                }
            }
            cell.bucket = cell.p_adj < strong ? fmt::format("p<{}", strong) : cell.p_adj < alpha ? fmt::format("p<{}", alpha) : "ns";
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

std::map<std::string, double> overall_mean_rank(const std::vector<TaskComparison>& tasks) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& t : tasks) {
        for (std::size_t i = 0; i < t.encoders.size(); ++i) {
            auto& [sum, count] = acc[t.encoders[i]];
            sum += t.ranks[i];
            ++count;
        }
    }
    std::map<std::string, double> out;
    for (const auto& [enc, sc] : acc) {
        out[enc] = sc.first / sc.second;
    }
    return out;
}

ComparisonReport compare_tables(const std::vector<MetricTable>& tables, const CompareOptions& options) {
    ComparisonReport report;
    report.options = options;
    std::map<std::string, std::vector<const MetricTable*>> by_task;
    for (const auto& t : tables) {
        by_task[t.task_id].push_back(&t);
    }

    for (auto& [task_id, group] : by_task) {
        std::sort(group.begin(), group.end(), [](const auto* a, const auto* b) { return a->encoder_id < b->encoder_id; });
        for (std::size_t i = 1; i < group.size(); ++i) {
            if (group[i]->encoder_id == group[i - 1]->encoder_id) {
                fail(ErrorCode::InvalidInput, "task " + task_id + ": duplicate table for encoder " + group[i]->encoder_id);
            }
        }
        if (group.size() < 2) {
            report.skipped[task_id] = "fewer than two encoders";
            continue;
        }
        const auto* first = group.front();
        bool consistent = true;
        for (const auto* t : group) {
            consistent = consistent && t->plan_hash == first->plan_hash && t->higher_is_better == first->higher_is_better &&
                         t->splits.size() == first->splits.size();
        }
        if (!consistent) {
            report.skipped[task_id] = "tables disagree on split plan or metric direction";
            continue;
        }
        std::vector<int> common;
        for (std::size_t s = 0; s < first->splits.size(); ++s) {
            bool ok = true;
            for (const auto* t : group) {
                ok = ok && t->splits[s].value.has_value();
            }
            if (ok) {
                common.push_back(static_cast<int>(s));
            }
        }
        if (static_cast<int>(common.size()) < options.min_splits) {
            report.skipped[task_id] = fmt::format("{} splits valid for every encoder, need {}", common.size(), options.min_splits);
            continue;
        }
        std::vector<EncoderScores> scores;
        for (const auto* t : group) {
            EncoderScores es{t->encoder_id, {}};
            for (int s : common) {
                es.values.push_back(*t->splits[static_cast<std::size_t>(s)].value);
            }
            scores.push_back(std::move(es));
        }
        auto cmp = pairwise_tests(task_id, std::move(scores), first->higher_is_better);
        cmp.used_splits = common;
        report.tasks.push_back(std::move(cmp));
    }

    if (options.scope == BhScope::Global) {
        std::vector<TaskComparison*> all;
        for (auto& t : report.tasks) {
            all.push_back(&t);
        }
        if (!all.empty()) {
            adjust_family(all);
        }
    } else {
        for (auto& t : report.tasks) {
            adjust_task_family(t);
        }
    }
    for (auto& t : report.tasks) {
        rank_with_significance(t, options.alpha);
        for (const auto& enc : t.encoders) {
            report.verdicts.push_back(win_tie_loss(t, enc, options.alpha));
        }
        report.sig_cells[t.task_id] = significance_matrix(t, options.strong_alpha, options.alpha);
    }
    report.overall_mean_rank = overall_mean_rank(report.tasks);
    return report;
}

std::string ComparisonReport::to_json() const {
    json j;
    j["alpha"] = options.alpha;
    j["strong_alpha"] = options.strong_alpha;
    j["bh_scope"] = options.scope == BhScope::Task ? "task" : "global";
    j["zero_differences"] = "dropped";
    j["min_splits"] = options.min_splits;
    j["tasks"] = json::array();
    for (const auto& t : tasks) {
        json jt;
        jt["task_id"] = t.task_id;
        jt["higher_is_better"] = t.higher_is_better;
        jt["encoders"] = t.encoders;
        jt["means"] = t.means;
        jt["ranks"] = t.ranks;
        jt["p_raw"] = t.p_raw;
        jt["p_adj"] = t.p_adj;
        jt["used_splits"] = t.used_splits;
        json cells = json::array();
        for (const auto& c : sig_cells.at(t.task_id)) {
            cells.push_back({{"row", c.row}, {"col", c.col}, {"sign", to_string(c.sign)}, {"p_adj", c.p_adj}, {"bucket", c.bucket}});
        }
        jt["significance"] = cells;
        j["tasks"].push_back(jt);
    }
    j["skipped"] = skipped;
    j["overall_mean_rank"] = overall_mean_rank;
    json v = json::array();
    for (const auto& w : verdicts) {
        v.push_back({{"task_id", w.task_id}, {"encoder", w.focal}, {"competitor", w.competitor}, {"verdict", to_string(w.verdict)}, {"p_adj", w.p_adj}});
    }
    j["win_tie_loss"] = v;
    return j.dump(1) + "\n";
}

std::string ComparisonReport::rank_heatmap_csv() const {
    std::string out = "task,encoder,mean,rank\n";
    for (const auto& t : tasks) {
        for (std::size_t i = 0; i < t.encoders.size(); ++i) {
            out += fmt::format("{},{},{},{}\n", t.task_id, t.encoders[i], t.means[i], t.ranks[i]);
        }
    }
    return out;
}

std::string ComparisonReport::sig_matrix_csv() const {
    std::string out = "task,row,col,sign,p_adj\n";
    for (const auto& t : tasks) {
        for (const auto& c : sig_cells.at(t.task_id)) {
            out += fmt::format("{},{},{},{},{}\n", t.task_id, c.row, c.col, to_string(c.sign), c.p_adj);
        }
    }
    return out;
}

std::string ComparisonReport::win_tie_loss_csv() const {
    std::string out = "task,encoder,competitor,verdict,p_adj\n";
    for (const auto& w : verdicts) {
        out += fmt::format("{},{},{},{},{}\n", w.task_id, w.focal, w.competitor, to_string(w.verdict), w.p_adj);
    }
    return out;
}

std::string ComparisonReport::overall_rank_csv() const {
    std::map<std::string, int> counts;
    for (const auto& t : tasks) {
        for (const auto& e : t.encoders) {
            ++counts[e];
        }
    }
    std::string out = "encoder,mean_rank,tasks\n";
    for (const auto& [enc, r] : overall_mean_rank) {
        out += fmt::format("{},{},{}\n", enc, r, counts.at(enc));
    }
    return out;
}

} // namespace milbench

#include "milbench/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "milbench/error.hpp"
#include "milbench/io.hpp"
#include "milbench/metrics.hpp"
#include "milbench/rng.hpp"

namespace milbench {

void SynthSpec::validate() const {
    if (n_slides < 2 || min_tiles < 1 || max_tiles < min_tiles || dim == 0) {
        fail(ErrorCode::InvalidInput, "synth spec: bad slide/tile/dim counts");
    }
    if (!(signal_fraction > 0.0 && signal_fraction <= 1.0) || !(noise_sigma > 0.0)) {
        fail(ErrorCode::InvalidInput, "synth spec: signal_fraction must lie in (0, 1] and noise_sigma be positive");
    }
    if ((kind == SynthKind::MilMulticlass || kind == SynthKind::TileLevel) && classes < 2) {
        fail(ErrorCode::InvalidInput, "synth spec: need at least two classes");
    }
    if (slides_per_patient < 0) {
        fail(ErrorCode::InvalidInput, "synth spec: slides_per_patient must be non-negative");
    }
}

namespace {

std::vector<double> random_direction(Rng& rng, std::uint32_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) {
        x /= norm;
    }
    return v;
}

int signal_count(double fraction, int n) {
    return std::min(n, static_cast<int>(std::ceil(fraction * n - 1e-12)));
}

} // namespace

SynthDataset gen_mil_dataset(const SynthSpec& spec, const std::string& encoder_id) {
    spec.validate();
    SynthDataset data;
    data.spec = spec;
    data.manifest.label_columns = {spec.label_column};

    const int n_dirs = (spec.kind == SynthKind::MilMulticlass || spec.kind == SynthKind::TileLevel) ? spec.classes : 1;
    Rng dir_rng(hash_combine(spec.seed, "directions"));
    for (int k = 0; k < n_dirs; ++k) {
        data.directions.push_back(random_direction(dir_rng, spec.dim));
    }
    const double shift = 4.0 * spec.noise_sigma;

    // balanced class assignment via a seeded permutation of slide indices
    std::vector<int> slot(static_cast<std::size_t>(spec.n_slides));
    for (int i = 0; i < spec.n_slides; ++i) {
        slot[static_cast<std::size_t>(i)] = i;
    }
    Rng label_rng(hash_combine(spec.seed, "labels"));
    label_rng.shuffle(slot);

    data.features.resize(static_cast<std::size_t>(spec.n_slides));
    data.signal_rows.resize(static_cast<std::size_t>(spec.n_slides));
    for (int s = 0; s < spec.n_slides; ++s) {
        const auto su = static_cast<std::size_t>(s);
        Rng rng(hash_combine(hash_combine(spec.seed, "slide"), static_cast<std::uint64_t>(s)));
        const int n = spec.min_tiles + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_tiles - spec.min_tiles + 1)));

        SlideRecord rec;
        rec.slide_id = fmt::format("S{:04d}", s);
        if (spec.slides_per_patient > 0) {
            rec.patient_id = fmt::format("P{:04d}", s / spec.slides_per_patient);
        }
        rec.cohort = "synthetic";

        FeatureMatrix m;
        m.slide_id = rec.slide_id;
        m.encoder_id = encoder_id;
        m.dim = spec.dim;
        m.rows = static_cast<std::uint64_t>(n);
        m.with_coords = true;
        m.data.resize(m.rows * m.dim);
        const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
        for (int i = 0; i < n; ++i) {
            m.coords.push_back({static_cast<std::uint32_t>((i % cols) * 224), static_cast<std::uint32_t>((i / cols) * 224)});
        }
        for (auto& v : m.data) {
            v = static_cast<float>(spec.noise_sigma * rng.normal());
        }

        // choose which rows carry signal and along which direction
        std::vector<int> row_dir(static_cast<std::size_t>(n), -1);
        auto mark_random_rows = [&](int count, int dir) {
            std::vector<int> rows(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                rows[static_cast<std::size_t>(i)] = i;
            }
            rng.shuffle(rows);
            for (int i = 0; i < count; ++i) {
                row_dir[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])] = dir;
            }
        };

        const int position = slot[su];
        switch (spec.kind) {
        case SynthKind::MilBinary: {
            const bool positive = position < spec.n_slides / 2;
            rec.labels[spec.label_column] = positive ? "1" : "0";
            if (positive) {
                mark_random_rows(signal_count(spec.signal_fraction, n), 0);
            }
            break;
        }
        case SynthKind::MilMulticlass: {
            const int cls = position % spec.classes;
            rec.labels[spec.label_column] = std::to_string(cls);
            mark_random_rows(signal_count(spec.signal_fraction, n), cls);
            break;
        }
        case SynthKind::Regression: {
            const double frac = std::min(1.0, rng.uniform(0.0, 2.0 * spec.signal_fraction));
            const int count = static_cast<int>(std::lround(frac * n));
            mark_random_rows(count, 0);
            rec.labels[spec.label_column] = fmt::format("{}", static_cast<double>(count) / n);
            break;
        }
        case SynthKind::TileLevel: {
            rec.labels[spec.label_column] = "";
            auto& slide_labels = data.tile_labels[rec.slide_id];
            for (int i = 0; i < n; ++i) {
                const int col = i % cols;
                const int region = std::min(spec.classes - 1, col * spec.classes / cols);
                row_dir[static_cast<std::size_t>(i)] = region;
                slide_labels[{m.coords[static_cast<std::size_t>(i)].x, m.coords[static_cast<std::size_t>(i)].y}] = region;
            }
            break;
        }
        }

        data.signal_rows[su].assign(static_cast<std::size_t>(n), false);
        for (int i = 0; i < n; ++i) {
            const int dir = row_dir[static_cast<std::size_t>(i)];
            if (dir < 0) {
                continue;
            }
            data.signal_rows[su][static_cast<std::size_t>(i)] = true;
            for (std::uint32_t k = 0; k < spec.dim; ++k) {
                m.data[static_cast<std::size_t>(i) * spec.dim + k] +=
                    static_cast<float>(shift * data.directions[static_cast<std::size_t>(dir)][k]);
            }
        }
        data.features[su] = std::move(m);
        data.manifest.slides.push_back(std::move(rec));
    }
    return data;
}

void write_synth_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
    data.manifest.write(dir / "manifest.csv");
    for (const auto& m : data.features) {
        write_features(m, dir / "features" / m.encoder_id / (m.slide_id + ".milf"));
    }
    if (data.spec.kind == SynthKind::TileLevel) {
        write_text_atomic(dir / (data.spec.label_column + ".csv"), tile_labels_csv(data.tile_labels));
    }
}

double oracle_probe_auc(const SynthDataset& data, OraclePooling pooling) {
    if (data.spec.kind != SynthKind::MilBinary) {
        fail(ErrorCode::InvalidInput, "oracle probe is defined for the binary kind");
    }
    const auto& dir = data.directions.front();
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t s = 0; s < data.features.size(); ++s) {
        const auto& m = data.features[s];
        std::vector<double> proj(m.rows);
        for (std::size_t i = 0; i < m.rows; ++i) {
            double acc = 0.0;
            for (std::uint32_t k = 0; k < m.dim; ++k) {
                acc += m.row(i)[k] * dir[k];
            }
            proj[i] = acc;
        }
        std::size_t keep = proj.size();
        if (pooling == OraclePooling::TopSignal) {
            keep = static_cast<std::size_t>(signal_count(data.spec.signal_fraction, static_cast<int>(proj.size())));
            std::partial_sort(proj.begin(), proj.begin() + static_cast<std::ptrdiff_t>(keep), proj.end(), std::greater<>());
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < keep; ++i) {
            sum += proj[i];
        }
        scores.push_back(sum / static_cast<double>(keep));
        labels.push_back(data.manifest.slides[s].labels.at(data.spec.label_column) == "1" ? 1 : 0);
    }
    return binary_auc(scores, labels);
}

} // namespace milbench

#include "milbench/manifest.hpp"

#include <set>

#include "milbench/csv.hpp"
#include "milbench/error.hpp"
#include "milbench/io.hpp"

namespace milbench {

bool SlideManifest::has_patients() const {
    for (const auto& s : slides) {
        if (!s.patient_id.empty()) {
            return true;
        }
    }
    return false;
}

std::optional<std::string> SlideManifest::label(const SlideRecord& slide, const std::string& column) const {
    const auto it = slide.labels.find(column);
    if (it == slide.labels.end() || it->second.empty()) {
        return std::nullopt;
    }
    return it->second;
}

const SlideRecord* SlideManifest::find(const std::string& slide_id) const {
    for (const auto& s : slides) {
        if (s.slide_id == slide_id) {
            return &s;
        }
    }
    return nullptr;
}

std::string SlideManifest::to_csv() const {
    std::string out = "slide_id,patient_id,cohort";
    for (const auto& c : label_columns) {
        csv::check_field(c);
        out += "," + c;
    }
    out += "\n";
    for (const auto& s : slides) {
        csv::check_field(s.slide_id);
        csv::check_field(s.patient_id);
        csv::check_field(s.cohort);
        out += s.slide_id + "," + s.patient_id + "," + s.cohort;
        for (const auto& c : label_columns) {
            const auto it = s.labels.find(c);
            const std::string value = it == s.labels.end() ? "" : it->second;
            csv::check_field(value);
            out += "," + value;
        }
        out += "\n";
    }
    return out;
}

SlideManifest SlideManifest::parse(const std::string& text, const std::string& origin) {
    const auto table = csv::parse(text, origin);
    const auto c_slide = table.require_column("slide_id");
    const int c_patient = table.column("patient_id");
    const int c_cohort = table.column("cohort");

    SlideManifest manifest;
    std::vector<std::size_t> label_idx;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        const auto& name = table.header[i];
        if (name != "slide_id" && name != "patient_id" && name != "cohort") {
            manifest.label_columns.push_back(name);
            label_idx.push_back(i);
        }
    }
    std::set<std::string> seen;
    for (const auto& row : table.rows) {
        SlideRecord rec;
        rec.slide_id = row[c_slide];
        if (rec.slide_id.empty()) {
            fail(ErrorCode::FormatError, origin + ": empty slide_id");
        }
        if (!seen.insert(rec.slide_id).second) {
            fail(ErrorCode::FormatError, origin + ": duplicate slide_id " + rec.slide_id);
        }
        if (c_patient >= 0) {
            rec.patient_id = row[static_cast<std::size_t>(c_patient)];
        }
        if (c_cohort >= 0) {
            rec.cohort = row[static_cast<std::size_t>(c_cohort)];
        }
        for (std::size_t k = 0; k < label_idx.size(); ++k) {
            rec.labels[manifest.label_columns[k]] = row[label_idx[k]];
        }
        manifest.slides.push_back(std::move(rec));
    }
    return manifest;
}

SlideManifest SlideManifest::read(const std::filesystem::path& path) {
    return parse(read_text(path), path.string());
}

void SlideManifest::write(const std::filesystem::path& path) const {
    write_text_atomic(path, to_csv());
}

} // namespace milbench

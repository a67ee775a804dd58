#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace milbench {

struct SlideRecord {
    std::string slide_id;
    /// Empty when unknown.
    std::string patient_id;
    std::string cohort;
    std::map<std::string, std::string> labels;
};

/// `slide_id,patient_id,cohort,<label columns...>`; slide ids unique.
struct SlideManifest {
    std::vector<std::string> label_columns;
    std::vector<SlideRecord> slides;

    bool has_patients() const;
    /// Empty optional when the slide has no value in that column.
    std::optional<std::string> label(const SlideRecord& slide, const std::string& column) const;
    const SlideRecord* find(const std::string& slide_id) const;

    std::string to_csv() const;
    static SlideManifest parse(const std::string& text, const std::string& origin = "<memory>");
    static SlideManifest read(const std::filesystem::path& path);
    void write(const std::filesystem::path& path) const;
};

} // namespace milbench

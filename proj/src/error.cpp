#include "milbench/error.hpp"

namespace milbench {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::DegenerateHistogram: return "DegenerateHistogram";
    case ErrorCode::UnsupportedResolution: return "UnsupportedResolution";
    case ErrorCode::StorageError: return "StorageError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::InvalidData: return "InvalidData";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::UndefinedMetric: return "UndefinedMetric";
    case ErrorCode::InfeasibleTask: return "InfeasibleTask";
    case ErrorCode::InfeasibleSplit: return "InfeasibleSplit";
    case ErrorCode::MissingFeatures: return "MissingFeatures";
    case ErrorCode::DegeneratePair: return "DegeneratePair";
    case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

} // namespace milbench

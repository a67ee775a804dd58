#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace milbench {

enum class ErrorCode {
    InvalidInput,
    DegenerateHistogram,
    UnsupportedResolution,
    StorageError,
    FormatError,
    CorruptFile,
    InvalidData,
    ShapeError,
    NumericalError,
    UndefinedMetric,
    InfeasibleTask,
    InfeasibleSplit,
    MissingFeatures,
    DegeneratePair,
    ConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace milbench

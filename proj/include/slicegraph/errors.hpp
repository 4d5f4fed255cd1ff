#pragma once

#include <stdexcept>
#include <string>

namespace slicegraph {

/// Base class for every error raised by the library. `kind()` is a short
/// stable tag used by the CLI in its structured error summary.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// Shape mismatches, invalid hyperparameters, bad topology parameters.
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};

/// Invalid data values: labels out of range, zero vectors under cosine, empty inputs.
struct DataError : Error {
    explicit DataError(const std::string& m) : Error("data", m) {}
};

/// Malformed feature files.
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("format", m) {}
};

/// Problems discovered while loading a manifest; the message lists every offender.
struct LoadError : Error {
    explicit LoadError(const std::string& m) : Error("load", m) {}
};

struct GraphError : Error {
    explicit GraphError(const std::string& m) : Error("graph", m) {}
};

/// A metric is undefined for the given input (e.g. AUROC with a single class).
struct MetricError : Error {
    explicit MetricError(const std::string& m) : Error("metric", m) {}
};

/// Non-finite values produced during optimization.
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

} // namespace slicegraph

#pragma once

#include <stdexcept>
#include <string>

namespace semcomm {

// Error taxonomy. Each pipeline stage throws one of these; the CLI maps
// them onto exit codes.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Output extents would be non-positive, extents not divisible, etc.
struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& what) : std::runtime_error(what) {}
};

// API misuse: non-scalar loss node, label out of range, ...
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed file on disk (weights, images, config).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Payload damaged in transit (bad magic, truncated body, invalid label).
struct CorruptionError : std::runtime_error {
    explicit CorruptionError(const std::string& what) : std::runtime_error(what) {}
};

// Not enough samples for a statistically meaningful estimate.
struct StatsError : std::runtime_error {
    explicit StatsError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace semcomm

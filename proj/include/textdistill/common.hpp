#pragma once

#include <stdexcept>
#include <string>

namespace textdistill {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / axis problems (mismatched matmul dims, filter taller than input, ...).
struct DimensionError : Error {
    using Error::Error;
};

// Bad argument values (zero batch size, non-positive temperature, ...).
struct ArgumentError : Error {
    using Error::Error;
};

// Token id outside the vocabulary.
struct VocabularyError : Error {
    using Error::Error;
};

// Class id out of range or label row not normalized.
struct LabelError : Error {
    using Error::Error;
};

// A gradient was requested for a variable the graph does not contain,
// or the graph is disconnected where it must not be.
struct DependencyError : Error {
    using Error::Error;
};

// NaN/Inf produced in checked mode, or a non-finite training loss.
struct NumericalError : Error {
    using Error::Error;
};

// Malformed input file (bad line, wrong field count, ...).
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid input that violates the data contract
// (unknown label, duplicate token, empty dataset, ...).
struct SchemaError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace textdistill

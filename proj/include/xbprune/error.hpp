#pragma once

#include <stdexcept>
#include <string>

namespace xbprune {

// Base of every error raised by the toolkit. The CLI maps NumericalError to
// exit code 3 and everything else to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input files: bad npy magic/version/dtype, JSON schema violations.
class FormatError : public Error {
public:
    using Error::Error;
};

// A well-formed input that violates a stated invariant.
class ValidationError : public Error {
public:
    ValidationError(const std::string& layer, const std::string& field, const std::string& what)
        : Error(layer.empty() ? field + ": " + what : "layer '" + layer + "', " + field + ": " + what),
          layer_(layer), field_(field) {}
    explicit ValidationError(const std::string& what) : Error(what) {}

    const std::string& layer() const noexcept { return layer_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::string layer_;
    std::string field_;
};

// Shape or mapping geometry that cannot be realized.
class GeometryError : public Error {
public:
    using Error::Error;
};

// Divergence or other non-finite numerical results.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace xbprune

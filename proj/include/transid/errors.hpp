#pragma once

#include <stdexcept>
#include <string>

namespace transid {

/// Input failed a documented invariant (bad spec, bad config, bad shape).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The requested infill density leaves no gap between struts.
class DensityInfeasibleError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// The posed object does not fit inside the image plane.
class FootprintError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up with the model configuration.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values encountered at a layer boundary.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training loss became NaN or infinite.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file content (PGM, geometry text, model binary, JSON document).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace transid

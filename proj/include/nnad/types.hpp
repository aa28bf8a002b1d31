#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace nnad {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (e.g. p_bar = 1).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Inconsistent vector/matrix sizes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An iterative numerical method failed; the message carries diagnostics.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed input file or document; the message names the offending field path.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment or backend configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Raw or derived artifacts disagree with each other.
class IntegrityError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_dim(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

}  // namespace detail

}  // namespace nnad

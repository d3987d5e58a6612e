// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moeffd {

// Shape disagreement between operands. The message names both shapes.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values (NaN/Inf) encountered; the message names the tensor.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// All-zero importance vector handed to the balancing loss.
class DegenerateGateError : public NumericError {
public:
    using NumericError::NumericError;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checkpoint written by an incompatible build or for a different model config.
class VersionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace moeffd

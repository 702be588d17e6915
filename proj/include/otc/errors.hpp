// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace otc {

/// Malformed data: a trajectory violating its invariants, mismatched sequence
/// lengths, a token stream that does not match the canonical serialization.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (e.g. negative m).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Invalid or inconsistent configuration. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse by the caller, such as mixing question ids in one group.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Non-finite loss or gradient. The CLI maps this to exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace otc

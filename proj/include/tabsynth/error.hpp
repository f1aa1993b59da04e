#pragma once

#include <stdexcept>
#include <string>

namespace tabsynth {

/// Bad input: malformed files, schema violations, unknown names, bad arguments.
/// The CLI maps these to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure while running an otherwise valid job (exit code 3).
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tabsynth

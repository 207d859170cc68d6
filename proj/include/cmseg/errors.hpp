// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_ERRORS_HPP
#define CMSEG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cmseg {

// Bad user input: malformed configs, missing files, contract violations on
// arguments. Maps to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures after validation passed: I/O errors, non-finite losses, internal
// contract breaks. Maps to exit code 2.
class RuntimeError : public std::runtime_error {
public:
    explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cmseg

#endif

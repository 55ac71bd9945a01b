// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lgrpo {

enum class ErrorKind {
    shape_mismatch,
    domain,
    config,
    invalid_argument,
    misalignment,
    io,
    gate_failure,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::shape_mismatch: return "shape mismatch";
        case ErrorKind::domain: return "domain error";
        case ErrorKind::config: return "configuration error";
        case ErrorKind::invalid_argument: return "invalid argument";
        case ErrorKind::misalignment: return "record misalignment";
        case ErrorKind::io: return "i/o error";
        case ErrorKind::gate_failure: return "gate failure";
    }
    return "error";
}

}  // namespace lgrpo

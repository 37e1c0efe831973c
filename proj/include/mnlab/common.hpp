// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mnlab {

/// Error category carried by every mnlab exception. Mirrors the C API
/// status codes one-to-one so the shared-library boundary can map them.
enum class ErrorCode {
    InvalidArgument = 1,
    Io = 2,
    Validation = 3,
    Transform = 4,
    Shape = 5,
    Numeric = 6,
    Internal = 7,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
    throw Error(code, msg);
}

} // namespace mnlab

// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_ERRORS_HPP
#define GRADNORM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gradnorm {

// Exit codes used by the CLI and by error categories throughout the library.
enum class ExitCode : int {
    ok = 0,
    verify_failed = 1,
    usage = 2,
    io = 3,
    numeric = 4,
};

/// File or stream failure (unreadable input, unwritable output, parse error).
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad user-supplied configuration (flags, scale grids, paths mixed up).
class usage_error : public std::runtime_error {
public:
    explicit usage_error(const std::string& what) : std::runtime_error(what) {}
};

/// Data-dependent numerical failure: degenerate corpus, rank-deficient fit,
/// identifiability problems.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gradnorm

#endif  // GRADNORM_ERRORS_HPP

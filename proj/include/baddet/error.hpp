#pragma once

#include <stdexcept>
#include <string>

namespace baddet {

enum class ErrorKind {
    InvalidInput,
    Placement,
    Parse,
    Validation,
    Infeasible,
    Eligibility,
    Generation,
    Io,
    Protocol,
    Bridge,
    Calibration,
    Usage,
};

const char* to_string(ErrorKind kind);

/// Every failure surfaced by the toolkit. The kind decides the CLI exit code:
/// input-side problems map to 1, runtime failures to 2.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    bool is_validation() const noexcept;

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

}  // namespace baddet

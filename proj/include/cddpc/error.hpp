#pragma once

#include <stdexcept>
#include <string>

namespace cddpc {

enum class ErrorKind {
    DepthExceedsLength,
    ZeroVariance,
    RankDeficient,
    DimensionMismatch,
    Diverged,
    MissingBaseline,
    InvalidArgument,
    Config,
    Io,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool ok, ErrorKind kind, const std::string& what) {
    if (!ok) throw Error(kind, what);
}

}  // namespace cddpc

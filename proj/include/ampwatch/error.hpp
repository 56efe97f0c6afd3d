#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ampwatch {

enum class ErrorCode {
    validation,
    not_found,
    already_exists,
    conflict,
    empty_stats,
    undefined,
    insufficient_data,
    format,
    io,
    internal,
};

std::string_view to_string(ErrorCode code);

/// Domain error carried through every module; the gateway maps the code to
/// an HTTP status.
class Error : public std::runtime_error {
public:
    /// (subject, message) pairs, e.g. one per offending hierarchy node.
    using Details = std::vector<std::pair<std::string, std::string>>;

    Error(ErrorCode code, const std::string& message, Details details = {})
        : std::runtime_error(message), code_(code), details_(std::move(details)) {}

    ErrorCode code() const noexcept { return code_; }
    const Details& details() const noexcept { return details_; }

private:
    ErrorCode code_;
    Details details_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace ampwatch

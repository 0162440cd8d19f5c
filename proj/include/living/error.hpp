#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace living
{

enum class ErrorCode
{
    InvalidArgument,
    InvalidState,
    Conflict,
    NotFound,
    Authentication,
    Revoked,
    Expired,
    Transport,
    Diverged,
    Io,
    HeaderParse,
    Truncated,
    Checksum,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the line protocol) can branch on the kind, not the text.
class Error : public std::runtime_error
{
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what)
        , code_(code)
    {
    }

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace living

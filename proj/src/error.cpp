#include "living/error.hpp"

namespace living
{

std::string_view to_string(ErrorCode code) noexcept
{
    switch (code)
    {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::InvalidState: return "invalid-state";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::Authentication: return "authentication";
    case ErrorCode::Revoked: return "revoked";
    case ErrorCode::Expired: return "expired";
    case ErrorCode::Transport: return "transport";
    case ErrorCode::Diverged: return "diverged";
    case ErrorCode::Io: return "io";
    case ErrorCode::HeaderParse: return "header-parse";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::Checksum: return "checksum";
    }
    return "unknown";
}

} // namespace living

#include "living/protocol.hpp"

#include "living/error.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <optional>
#include <vector>

#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

namespace living
{
namespace
{

std::string format_double(double v)
{
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::optional<double> parse_double(std::string_view s)
{
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size())
    {
        return std::nullopt;
    }
    return v;
}

// Splits off up to `n` space-separated words; the remainder is returned last.
std::vector<std::string_view> split(std::string_view line, std::size_t n)
{
    std::vector<std::string_view> out;
    while (out.size() < n && !line.empty())
    {
        const std::size_t sp = line.find(' ');
        out.push_back(line.substr(0, sp));
        line = sp == std::string_view::npos ? std::string_view{} : line.substr(sp + 1);
    }
    out.push_back(line);
    return out;
}

std::string err(ErrorCode code, std::string_view message)
{
    std::string msg(message);
    for (char& c : msg)
    {
        if (c == '\n' || c == '\r')
        {
            c = ' ';
        }
    }
    return std::string("ERR ") + std::string(to_string(code)) + " " + msg;
}

double number(std::string_view s, std::string_view what)
{
    if (const auto v = parse_double(s))
    {
        return *v;
    }
    throw Error(ErrorCode::InvalidArgument, "bad " + std::string(what) + ": '" + std::string(s) + "'");
}

std::optional<ErrorCode> code_from(std::string_view name)
{
    for (int i = 0; i <= static_cast<int>(ErrorCode::Checksum); ++i)
    {
        const auto code = static_cast<ErrorCode>(i);
        if (name == to_string(code))
        {
            return code;
        }
    }
    return std::nullopt;
}

void write_all(int fd, std::string_view data)
{
    while (!data.empty())
    {
        const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
        if (n < 0)
        {
            if (errno == EINTR)
            {
                continue;
            }
            throw Error(ErrorCode::Transport, std::string("credstore socket write: ") + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

// Reads one '\n'-terminated line; nullopt on orderly shutdown.
std::optional<std::string> read_line(int fd, std::string& pending)
{
    for (;;)
    {
        const std::size_t nl = pending.find('\n');
        if (nl != std::string::npos)
        {
            std::string line = pending.substr(0, nl);
            pending.erase(0, nl + 1);
            return line;
        }
        char buf[512];
        const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
        if (n == 0)
        {
            return std::nullopt;
        }
        if (n < 0)
        {
            if (errno == EINTR)
            {
                continue;
            }
            throw Error(ErrorCode::Transport, std::string("credstore socket read: ") + std::strerror(errno));
        }
        pending.append(buf, static_cast<std::size_t>(n));
    }
}

sockaddr_un address_of(const std::filesystem::path& path)
{
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    const std::string s = path.string();
    if (s.size() >= sizeof addr.sun_path)
    {
        throw Error(ErrorCode::InvalidArgument, "credstore socket path too long: " + s);
    }
    std::memcpy(addr.sun_path, s.c_str(), s.size() + 1);
    return addr;
}

} // namespace

std::string handle_request(CredentialStore& store, std::string_view line)
{
    if (!line.empty() && line.back() == '\r')
    {
        line.remove_suffix(1);
    }
    const auto head = split(line, 1);
    const std::string_view verb = head[0];
    try
    {
        if (verb == "STORE")
        {
            const auto a = split(head[1], 2);
            if (a.size() != 3 || a[2].empty())
            {
                return err(ErrorCode::InvalidArgument, "usage: STORE <lifetime> <now> <password>");
            }
            return "OK " + store.store_credential(a[2], number(a[0], "lifetime"), number(a[1], "now"));
        }
        if (verb == "ISSUE" || verb == "RENEW")
        {
            const auto a = split(head[1], 3);
            if (a.size() != 4 || a[3].empty())
            {
                return err(ErrorCode::InvalidArgument, "usage: " + std::string(verb) + " <id> <seconds> <now> <password>");
            }
            const std::string id(a[0]);
            const double seconds = number(a[1], "duration");
            const double now = number(a[2], "now");
            if (verb == "RENEW")
            {
                store.renew(id, a[3], seconds, now);
                return "OK";
            }
            const ProxyToken t = store.issue_proxy(id, a[3], seconds, now);
            return "OK " + t.token_id + " " + t.credential_id + " " + format_double(t.issued_at) + " " +
                   format_double(t.expires_at);
        }
        if (verb == "REVOKE")
        {
            if (head[1].empty() || head[1].find(' ') != std::string_view::npos)
            {
                return err(ErrorCode::InvalidArgument, "usage: REVOKE <id>");
            }
            store.revoke(std::string(head[1]));
            return "OK";
        }
        if (verb == "VALIDATE")
        {
            const auto a = split(head[1], 1);
            if (a.size() != 2 || a[0].empty())
            {
                return err(ErrorCode::InvalidArgument, "usage: VALIDATE <token-id> <now>");
            }
            return std::string("OK ") + to_string(store.validate(std::string(a[0]), number(a[1], "now")));
        }
        return err(ErrorCode::InvalidArgument, "unknown verb '" + std::string(verb) + "'");
    }
    catch (const Error& e)
    {
        return err(e.code(), e.what());
    }
}

CredstoreServer::CredstoreServer(CredentialStore& store, std::filesystem::path socket_path)
    : store_(store)
    , path_(std::move(socket_path))
{
    const sockaddr_un addr = address_of(path_);
    listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0)
    {
        throw Error(ErrorCode::Transport, std::string("credstore socket: ") + std::strerror(errno));
    }
    std::error_code ignored;
    std::filesystem::remove(path_, ignored);
    if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 8) != 0)
    {
        const int e = errno;
        ::close(listen_fd_);
        throw Error(ErrorCode::Transport, "credstore bind " + path_.string() + ": " + std::strerror(e));
    }
    thread_ = std::thread([this] { serve(); });
}

CredstoreServer::~CredstoreServer()
{
    stop();
}

void CredstoreServer::stop()
{
    if (!running_.exchange(false))
    {
        return;
    }
    if (thread_.joinable())
    {
        thread_.join();
    }
    ::close(listen_fd_);
    std::error_code ignored;
    std::filesystem::remove(path_, ignored);
}

void CredstoreServer::serve()
{
    while (running_)
    {
        pollfd p{listen_fd_, POLLIN, 0};
        if (::poll(&p, 1, 50) <= 0)
        {
            continue;
        }
        const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd >= 0)
        {
            serve_connection(fd);
            ::close(fd);
        }
    }
}

void CredstoreServer::serve_connection(int fd)
{
    std::string pending;
    try
    {
        while (running_)
        {
            pollfd p{fd, POLLIN, 0};
            if (pending.find('\n') == std::string::npos && ::poll(&p, 1, 50) <= 0)
            {
                continue;
            }
            const auto line = read_line(fd, pending);
            if (!line)
            {
                return;
            }
            write_all(fd, handle_request(store_, *line) + "\n");
        }
    }
    catch (const Error&)
    {
        // Broken client; drop the connection.
    }
}

CredstoreClient::CredstoreClient(const std::filesystem::path& socket_path)
{
    const sockaddr_un addr = address_of(socket_path);
    fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0 || ::connect(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    {
        const int e = errno;
        if (fd_ >= 0)
        {
            ::close(fd_);
        }
        throw Error(ErrorCode::Transport, "credstore connect " + socket_path.string() + ": " + std::strerror(e));
    }
}

CredstoreClient::~CredstoreClient()
{
    ::close(fd_);
}

std::string CredstoreClient::request(std::string_view line) const
{
    if (line.find('\n') != std::string_view::npos)
    {
        throw Error(ErrorCode::InvalidArgument, "credstore request must be a single line");
    }
    write_all(fd_, std::string(line) + "\n");
    auto response = read_line(fd_, pending_);
    if (!response)
    {
        throw Error(ErrorCode::Transport, "credstore closed the connection");
    }
    return *response;
}

namespace
{

// Payload after "OK", or the decoded error rethrown.
std::string expect_ok(const std::string& response)
{
    if (response == "OK")
    {
        return {};
    }
    if (response.rfind("OK ", 0) == 0)
    {
        return response.substr(3);
    }
    if (response.rfind("ERR ", 0) == 0)
    {
        const auto parts = split(std::string_view(response).substr(4), 1);
        const auto code = code_from(parts[0]);
        throw Error(code.value_or(ErrorCode::Transport), std::string(parts[1]));
    }
    throw Error(ErrorCode::Transport, "malformed credstore response: " + response);
}

} // namespace

std::string CredstoreClient::store_credential(std::string_view password, double lifetime, double now)
{
    return expect_ok(request("STORE " + format_double(lifetime) + " " + format_double(now) + " " + std::string(password)));
}

ProxyToken CredstoreClient::issue_proxy(const std::string& id, std::string_view password, double duration, double now)
{
    const std::string payload = expect_ok(request("ISSUE " + id + " " + format_double(duration) + " " +
                                                  format_double(now) + " " + std::string(password)));
    const auto f = split(payload, 3);
    if (f.size() != 4)
    {
        throw Error(ErrorCode::Transport, "malformed ISSUE response: " + payload);
    }
    return {std::string(f[0]), std::string(f[1]), number(f[2], "issued_at"), number(f[3], "expires_at")};
}

void CredstoreClient::revoke(const std::string& id)
{
    expect_ok(request("REVOKE " + id));
}

void CredstoreClient::renew(const std::string& id, std::string_view password, double new_lifetime, double now)
{
    expect_ok(request("RENEW " + id + " " + format_double(new_lifetime) + " " + format_double(now) + " " +
                      std::string(password)));
}

TokenStatus CredstoreClient::validate(const ProxyToken& token, double now) const
{
    const std::string payload = expect_ok(request("VALIDATE " + token.token_id + " " + format_double(now)));
    for (const TokenStatus s : {TokenStatus::Valid, TokenStatus::Expired, TokenStatus::Revoked, TokenStatus::Unknown})
    {
        if (payload == to_string(s))
        {
            return s;
        }
    }
    throw Error(ErrorCode::Transport, "malformed VALIDATE response: " + payload);
}

} // namespace living

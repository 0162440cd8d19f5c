#pragma once

#include "living/credstore.hpp"

#include <atomic>
#include <filesystem>
#include <string>
#include <string_view>
#include <thread>

// Line protocol that exposes a CredentialStore as a separate local service.
// One request per line, one response per line:
//
//   STORE <lifetime> <now> <password>
//   ISSUE <credential-id> <duration> <now> <password>
//   REVOKE <credential-id>
//   RENEW <credential-id> <new-lifetime> <now> <password>
//   VALIDATE <token-id> <now>
//
// Success is "OK ..." and failure "ERR <error-code> <message>". The password
// runs to the end of the line.

namespace living
{

/// Executes one request line against the store and returns the response line
/// without its terminator. Never throws for malformed input.
std::string handle_request(CredentialStore& store, std::string_view line);

/// Serves a store on a Unix domain socket from a background thread.
class CredstoreServer
{
public:
    CredstoreServer(CredentialStore& store, std::filesystem::path socket_path);
    ~CredstoreServer();

    CredstoreServer(const CredstoreServer&) = delete;
    CredstoreServer& operator=(const CredstoreServer&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

    void stop();

private:
    void serve();
    void serve_connection(int fd);

    CredentialStore& store_;
    std::filesystem::path path_;
    int listen_fd_ = -1;
    std::atomic<bool> running_{true};
    std::thread thread_;
};

/// Client side; also usable as the fabric's token validator.
class CredstoreClient : public TokenValidator
{
public:
    explicit CredstoreClient(const std::filesystem::path& socket_path);
    ~CredstoreClient() override;

    CredstoreClient(const CredstoreClient&) = delete;
    CredstoreClient& operator=(const CredstoreClient&) = delete;

    std::string store_credential(std::string_view password, double lifetime, double now);
    ProxyToken issue_proxy(const std::string& id, std::string_view password, double duration, double now);
    void revoke(const std::string& id);
    void renew(const std::string& id, std::string_view password, double new_lifetime, double now);
    [[nodiscard]] TokenStatus validate(const ProxyToken& token, double now) const override;

    /// Sends one raw line and returns the raw response.
    std::string request(std::string_view line) const;

private:
    int fd_ = -1;
    mutable std::string pending_;
};

} // namespace living

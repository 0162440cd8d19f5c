#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

// A MyProxy-like credential service. The user deposits a long-lived
// credential protected by a password; the application trades the password
// for short-lived proxy tokens. Times are simulated seconds.

namespace living
{

struct ProxyToken
{
    std::string token_id;
    std::string credential_id;
    double issued_at = 0.0;
    double expires_at = 0.0;
};

enum class TokenStatus
{
    Valid,
    Expired,
    Revoked,
    Unknown,
};

const char* to_string(TokenStatus status) noexcept;

/// What the grid fabric consults before every gated operation.
class TokenValidator
{
public:
    virtual ~TokenValidator() = default;
    [[nodiscard]] virtual TokenStatus validate(const ProxyToken& token, double now) const = 0;
};

struct StoredCredential
{
    std::string id;
    std::array<std::uint8_t, 16> salt{};
    std::array<std::uint8_t, 32> password_digest{};
    double expires_at = 0.0;
    bool revoked = false;
};

class CredentialStore : public TokenValidator
{
public:
    static constexpr double kDefaultMaxProxyLifetime = 2.0 * 3600.0;

    explicit CredentialStore(std::string name, double max_proxy_lifetime = kDefaultMaxProxyLifetime);
    ~CredentialStore() override;

    CredentialStore(const CredentialStore&) = delete;
    CredentialStore& operator=(const CredentialStore&) = delete;

    [[nodiscard]] const std::string& name() const noexcept { return name_; }
    [[nodiscard]] double max_proxy_lifetime() const noexcept { return max_proxy_lifetime_; }

    std::string store_credential(std::string_view password, double lifetime, double now);

    /// Token lifetime is min(duration, credential remaining lifetime).
    ProxyToken issue_proxy(const std::string& id, std::string_view password, double duration, double now);

    /// Idempotent. Outstanding tokens stop validating immediately.
    void revoke(const std::string& id);

    void renew(const std::string& id, std::string_view password, double new_lifetime, double now);

    /// Copies the credential (digest, salt, expiry, revocation) to target and
    /// links the two for later sync().
    void replicate(const std::string& id, CredentialStore& target);

    /// Pull-based reconciliation with every linked replica: revocation is
    /// OR-ed, expiry takes the later value, issued tokens are shared.
    void sync();

    [[nodiscard]] TokenStatus validate(const ProxyToken& token, double now) const override;
    [[nodiscard]] TokenStatus validate(const std::string& token_id, double now) const;

    [[nodiscard]] bool verify_password(const std::string& id, std::string_view password) const;
    [[nodiscard]] StoredCredential credential(const std::string& id) const;
    [[nodiscard]] bool contains(const std::string& id) const;

    /// Simulated availability; an unreachable store refuses replication.
    void set_reachable(bool reachable);
    [[nodiscard]] bool reachable() const;

    /// JSON dump of the state at rest. Holds only salts and digests.
    [[nodiscard]] std::string serialize() const;

private:
    const StoredCredential& find_locked(const std::string& id) const;
    StoredCredential& find_locked(const std::string& id);
    void check_password_locked(const StoredCredential& cred, std::string_view password) const;
    TokenStatus status_locked(const ProxyToken& token, double now) const;

    std::string name_;
    double max_proxy_lifetime_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, StoredCredential> credentials_;
    std::map<std::string, ProxyToken> tokens_;
    std::map<std::string, std::vector<CredentialStore*>> replicas_;
    std::uint64_t next_credential_ = 1;
    std::uint64_t next_token_ = 1;
    bool reachable_ = true;
};

} // namespace living

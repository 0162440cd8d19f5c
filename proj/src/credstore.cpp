#include "living/credstore.hpp"

#include "living/error.hpp"

#include <json.hpp>
#include <sodium.h>

#include <algorithm>
#include <mutex>
#include <stdexcept>

namespace living
{

const char* to_string(TokenStatus status) noexcept
{
    switch (status)
    {
    case TokenStatus::Valid: return "valid";
    case TokenStatus::Expired: return "expired";
    case TokenStatus::Revoked: return "revoked";
    case TokenStatus::Unknown: return "unknown";
    }
    return "unknown";
}

namespace
{

void ensure_sodium()
{
    static const bool ready = [] { return sodium_init() >= 0; }();
    if (!ready)
    {
        throw std::runtime_error("libsodium failed to initialise");
    }
}

std::array<std::uint8_t, 32> digest(const std::array<std::uint8_t, 16>& salt, std::string_view password)
{
    std::array<std::uint8_t, 32> out{};
    crypto_generichash_state state;
    crypto_generichash_init(&state, nullptr, 0, out.size());
    crypto_generichash_update(&state, salt.data(), salt.size());
    crypto_generichash_update(&state, reinterpret_cast<const unsigned char*>(password.data()), password.size());
    crypto_generichash_final(&state, out.data(), out.size());
    return out;
}

template <std::size_t N>
std::string hex(const std::array<std::uint8_t, N>& bytes)
{
    std::string out(2 * N + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), bytes.data(), N);
    out.pop_back();
    return out;
}

} // namespace

CredentialStore::CredentialStore(std::string name, double max_proxy_lifetime)
    : name_(std::move(name))
    , max_proxy_lifetime_(max_proxy_lifetime)
{
    ensure_sodium();
    if (!(max_proxy_lifetime_ > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "credstore: max proxy lifetime must be positive");
    }
}

CredentialStore::~CredentialStore()
{
    std::vector<CredentialStore*> peers;
    {
        std::unique_lock lock(mutex_);
        for (auto& [id, list] : replicas_)
        {
            peers.insert(peers.end(), list.begin(), list.end());
        }
    }
    std::sort(peers.begin(), peers.end());
    peers.erase(std::unique(peers.begin(), peers.end()), peers.end());
    for (CredentialStore* peer : peers)
    {
        std::unique_lock lock(peer->mutex_);
        for (auto& [id, list] : peer->replicas_)
        {
            std::erase(list, this);
        }
    }
}

const StoredCredential& CredentialStore::find_locked(const std::string& id) const
{
    const auto it = credentials_.find(id);
    if (it == credentials_.end())
    {
        throw Error(ErrorCode::NotFound, "credstore: unknown credential " + id);
    }
    return it->second;
}

StoredCredential& CredentialStore::find_locked(const std::string& id)
{
    return const_cast<StoredCredential&>(std::as_const(*this).find_locked(id));
}

void CredentialStore::check_password_locked(const StoredCredential& cred, std::string_view password) const
{
    const auto d = digest(cred.salt, password);
    if (sodium_memcmp(d.data(), cred.password_digest.data(), d.size()) != 0)
    {
        throw Error(ErrorCode::Authentication, "credstore: wrong password for " + cred.id);
    }
}

std::string CredentialStore::store_credential(std::string_view password, double lifetime, double now)
{
    if (!(lifetime > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "credstore: credential lifetime must be positive");
    }
    StoredCredential cred;
    randombytes_buf(cred.salt.data(), cred.salt.size());
    cred.password_digest = digest(cred.salt, password);
    cred.expires_at = now + lifetime;

    std::unique_lock lock(mutex_);
    cred.id = name_ + "/cred-" + std::to_string(next_credential_++);
    const std::string id = cred.id;
    credentials_.emplace(id, std::move(cred));
    return id;
}

ProxyToken CredentialStore::issue_proxy(const std::string& id, std::string_view password, double duration, double now)
{
    std::unique_lock lock(mutex_);
    const StoredCredential& cred = find_locked(id);
    check_password_locked(cred, password);
    if (cred.revoked)
    {
        throw Error(ErrorCode::Revoked, "credstore: credential " + id + " was revoked");
    }
    if (now >= cred.expires_at)
    {
        throw Error(ErrorCode::Expired, "credstore: credential " + id + " has expired");
    }
    if (!(duration > 0.0) || duration > max_proxy_lifetime_)
    {
        throw Error(ErrorCode::InvalidArgument, "credstore: proxy duration must lie in (0, max lifetime]");
    }
    ProxyToken token;
    token.token_id = name_ + "/tok-" + std::to_string(next_token_++);
    token.credential_id = id;
    token.issued_at = now;
    token.expires_at = std::min(now + duration, cred.expires_at);
    tokens_.emplace(token.token_id, token);
    return token;
}

void CredentialStore::revoke(const std::string& id)
{
    std::unique_lock lock(mutex_);
    find_locked(id).revoked = true;
}

void CredentialStore::renew(const std::string& id, std::string_view password, double new_lifetime, double now)
{
    std::unique_lock lock(mutex_);
    StoredCredential& cred = find_locked(id);
    check_password_locked(cred, password);
    if (cred.revoked)
    {
        throw Error(ErrorCode::Revoked, "credstore: credential " + id + " was revoked");
    }
    if (!(new_lifetime > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "credstore: renewal lifetime must be positive");
    }
    cred.expires_at = now + new_lifetime;
}

void CredentialStore::replicate(const std::string& id, CredentialStore& target)
{
    if (&target == this)
    {
        throw Error(ErrorCode::InvalidArgument, "credstore: cannot replicate onto itself");
    }
    std::scoped_lock lock(mutex_, target.mutex_);
    const StoredCredential& cred = find_locked(id);
    if (!target.reachable_)
    {
        throw Error(ErrorCode::Transport, "credstore: replica " + target.name_ + " is unreachable");
    }
    target.credentials_[id] = cred;
    auto& mine = replicas_[id];
    if (std::find(mine.begin(), mine.end(), &target) == mine.end())
    {
        mine.push_back(&target);
    }
    auto& theirs = target.replicas_[id];
    if (std::find(theirs.begin(), theirs.end(), this) == theirs.end())
    {
        theirs.push_back(this);
    }
}

void CredentialStore::sync()
{
    std::vector<std::pair<std::string, CredentialStore*>> links;
    {
        std::shared_lock lock(mutex_);
        for (const auto& [id, peers] : replicas_)
        {
            for (CredentialStore* peer : peers)
            {
                links.emplace_back(id, peer);
            }
        }
    }
    bool missed = false;
    for (const auto& [id, peer] : links)
    {
        std::scoped_lock lock(mutex_, peer->mutex_);
        if (!reachable_ || !peer->reachable_)
        {
            missed = true;
            continue;
        }
        StoredCredential& a = credentials_.at(id);
        StoredCredential& b = peer->credentials_.at(id);
        a.revoked = b.revoked = a.revoked || b.revoked;
        a.expires_at = b.expires_at = std::max(a.expires_at, b.expires_at);
        for (const auto& [tid, token] : tokens_)
        {
            if (token.credential_id == id)
            {
                peer->tokens_.emplace(tid, token);
            }
        }
        for (const auto& [tid, token] : peer->tokens_)
        {
            if (token.credential_id == id)
            {
                tokens_.emplace(tid, token);
            }
        }
    }
    if (missed)
    {
        throw Error(ErrorCode::Transport, "credstore: some replicas were unreachable during sync");
    }
}

TokenStatus CredentialStore::status_locked(const ProxyToken& token, double now) const
{
    const auto it = tokens_.find(token.token_id);
    if (it == tokens_.end() || it->second.credential_id != token.credential_id ||
        it->second.expires_at != token.expires_at)
    {
        return TokenStatus::Unknown;
    }
    const auto cred = credentials_.find(token.credential_id);
    if (cred == credentials_.end())
    {
        return TokenStatus::Unknown;
    }
    if (cred->second.revoked)
    {
        return TokenStatus::Revoked;
    }
    if (!(now < it->second.expires_at))
    {
        return TokenStatus::Expired;
    }
    return TokenStatus::Valid;
}

TokenStatus CredentialStore::validate(const ProxyToken& token, double now) const
{
    std::shared_lock lock(mutex_);
    return status_locked(token, now);
}

TokenStatus CredentialStore::validate(const std::string& token_id, double now) const
{
    std::shared_lock lock(mutex_);
    const auto it = tokens_.find(token_id);
    if (it == tokens_.end())
    {
        return TokenStatus::Unknown;
    }
    return status_locked(it->second, now);
}

bool CredentialStore::verify_password(const std::string& id, std::string_view password) const
{
    std::shared_lock lock(mutex_);
    const StoredCredential& cred = find_locked(id);
    const auto d = digest(cred.salt, password);
    return sodium_memcmp(d.data(), cred.password_digest.data(), d.size()) == 0;
}

StoredCredential CredentialStore::credential(const std::string& id) const
{
    std::shared_lock lock(mutex_);
    return find_locked(id);
}

bool CredentialStore::contains(const std::string& id) const
{
    std::shared_lock lock(mutex_);
    return credentials_.count(id) != 0;
}

void CredentialStore::set_reachable(bool reachable)
{
    std::unique_lock lock(mutex_);
    reachable_ = reachable;
}

bool CredentialStore::reachable() const
{
    std::shared_lock lock(mutex_);
    return reachable_;
}

std::string CredentialStore::serialize() const
{
    std::shared_lock lock(mutex_);
    nlohmann::json doc;
    doc["name"] = name_;
    doc["max_proxy_lifetime"] = max_proxy_lifetime_;
    doc["credentials"] = nlohmann::json::array();
    for (const auto& [id, cred] : credentials_)
    {
        doc["credentials"].push_back({{"id", id},
                                      {"salt", hex(cred.salt)},
                                      {"digest", hex(cred.password_digest)},
                                      {"expires_at", cred.expires_at},
                                      {"revoked", cred.revoked}});
    }
    doc["tokens"] = nlohmann::json::array();
    for (const auto& [id, token] : tokens_)
    {
        doc["tokens"].push_back({{"id", id},
                                 {"credential", token.credential_id},
                                 {"issued_at", token.issued_at},
                                 {"expires_at", token.expires_at}});
    }
    return doc.dump();
}

} // namespace living

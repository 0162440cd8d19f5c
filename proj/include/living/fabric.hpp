#pragma once

#include "living/credstore.hpp"
#include "living/snapshot.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

// Simulated grid: nodes with capability tags, a latency + bandwidth pipe
// between every pair of endpoints, a job-submission service and the clock
// that accounts every simulated second to one of six categories.

namespace living
{

enum class Capability
{
    TreeAccelerator,
    DirectAccelerator,
};

const char* to_string(Capability c) noexcept;
Capability capability_from_string(std::string_view s);

struct NodeSpec
{
    std::string name;
    std::string location;
    std::string hardware;
    std::set<Capability> capabilities;
    double submission_overhead = 0.5;
    double init_overhead = 0.2;
    // Cost model used in modeled timing mode: pairwise force evaluations per
    // second. Defaults match the bundled kernels on one desktop core.
    double tree_rate = 6.0e7;
    double direct_rate = 6.5e8;

    [[nodiscard]] bool has(Capability c) const { return capabilities.count(c) != 0; }
};

struct LinkModel
{
    double latency = 0.1;
    double bandwidth = 550.0e3;
};

struct LocalIoModel
{
    double latency = 0.01;
    double bandwidth = 100.0e6;
};

struct LinkOverride
{
    std::string from;
    std::string to;
    LinkModel link;
};

struct FabricConfig
{
    std::vector<NodeSpec> nodes;
    LinkModel default_link;
    std::vector<LinkOverride> links;
    LocalIoModel local_io;
    // Multiplicative transfer-time noise amplitude; 0 disables it.
    double jitter = 0.0;
    std::uint64_t jitter_seed = 1;
};

/// Two-node setup from the reference experiment: a GPU tree node in the
/// Netherlands and a GRAPE direct node in the United States.
FabricConfig default_fabric_config();
FabricConfig parse_fabric_config(std::string_view json_text);
FabricConfig load_fabric_config(const std::filesystem::path& path);
std::string to_json(const FabricConfig& cfg);

enum class Category : std::size_t
{
    Direct,
    Tree,
    LocalIo,
    Transfer,
    Submission,
    Init,
};

inline constexpr std::array<Category, 6> kCategories{Category::Direct,   Category::Tree,       Category::LocalIo,
                                                     Category::Transfer, Category::Submission, Category::Init};

const char* to_string(Category c) noexcept;

struct Accounting
{
    std::array<double, 6> seconds{};

    [[nodiscard]] double operator[](Category c) const noexcept { return seconds[static_cast<std::size_t>(c)]; }
    [[nodiscard]] double total() const noexcept;
    /// local-io + transfer + submission + init
    [[nodiscard]] double overhead() const noexcept;
};

class SimClock
{
public:
    [[nodiscard]] double now() const noexcept { return now_; }
    void advance(double seconds);

private:
    double now_ = 0.0;
};

struct FileRef
{
    std::string name;
    std::uint64_t size = 0;
};

struct JobSpec
{
    std::string target_node;
    std::vector<FileRef> input_files;
    std::string task_descriptor;
    ProxyToken token;
};

struct JobHandle
{
    std::uint64_t id = 0;
    std::string node;
};

struct Job
{
    JobHandle handle;
    JobSpec spec;
};

/// Every gated operation that went through, for audits.
struct GatedOperation
{
    enum class Kind
    {
        Transfer,
        Submission,
    };
    Kind kind;
    std::string token_id;
    // Simulated time at which the token was checked.
    double at = 0.0;
};

class Fabric
{
public:
    /// Pseudo-endpoint for the user's machine that launches the run.
    static constexpr std::string_view kLauncher = "launcher";

    Fabric(FabricConfig cfg, const TokenValidator& validator);

    std::size_t register_node(NodeSpec spec);
    [[nodiscard]] const NodeSpec& node(const std::string& name) const;
    [[nodiscard]] bool has_node(const std::string& name) const;
    [[nodiscard]] const std::vector<NodeSpec>& nodes() const noexcept { return nodes_; }

    /// First registered node with the capability, preferring `current`.
    [[nodiscard]] std::optional<std::string> select_node(Capability needed, const std::string& current = {}) const;

    [[nodiscard]] LinkModel link(const std::string& from, const std::string& to) const;
    [[nodiscard]] const LocalIoModel& local_io() const noexcept { return cfg_.local_io; }

    /// Moves file_size bytes between endpoints; books latency + size/bandwidth.
    double transfer(std::uint64_t file_size, const std::string& from, const std::string& to, const ProxyToken& token);

    /// Like transfer(), and also copies the named file between node stores.
    double transfer_file(const std::string& file, const std::string& from, const std::string& to,
                         const ProxyToken& token);

    JobHandle submit_job(const JobSpec& job, const ProxyToken& token);

    /// Next job delivered to the node's executor, if any.
    std::optional<Job> take_job(const std::string& node);

    void book(Category category, double seconds);

    /// Files held on an endpoint's local disk.
    std::map<std::string, Bytes>& storage(const std::string& endpoint);

    [[nodiscard]] const SimClock& clock() const noexcept { return clock_; }
    [[nodiscard]] const Accounting& accounting() const noexcept { return accounting_; }
    [[nodiscard]] const std::vector<GatedOperation>& audit() const noexcept { return audit_; }

private:
    void require_endpoint(const std::string& name) const;
    void gate(const ProxyToken& token) const;

    FabricConfig cfg_;
    const TokenValidator& validator_;
    std::vector<NodeSpec> nodes_;
    std::map<std::string, std::deque<Job>> inboxes_;
    std::map<std::string, std::map<std::string, Bytes>> storage_;
    SimClock clock_;
    Accounting accounting_;
    std::vector<GatedOperation> audit_;
    std::uint64_t next_job_ = 1;
    std::mt19937_64 jitter_rng_;
};

} // namespace living

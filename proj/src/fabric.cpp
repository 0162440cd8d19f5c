#include "living/fabric.hpp"

#include "living/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace living
{

const char* to_string(Capability c) noexcept
{
    return c == Capability::TreeAccelerator ? "tree-accelerator" : "direct-accelerator";
}

Capability capability_from_string(std::string_view s)
{
    if (s == "tree-accelerator")
    {
        return Capability::TreeAccelerator;
    }
    if (s == "direct-accelerator")
    {
        return Capability::DirectAccelerator;
    }
    throw Error(ErrorCode::InvalidArgument, "fabric: unknown capability '" + std::string(s) + "'");
}

const char* to_string(Category c) noexcept
{
    switch (c)
    {
    case Category::Direct: return "direct";
    case Category::Tree: return "tree";
    case Category::LocalIo: return "local-io";
    case Category::Transfer: return "transfer";
    case Category::Submission: return "submission";
    case Category::Init: return "init";
    }
    return "unknown";
}

double Accounting::total() const noexcept
{
    return std::accumulate(seconds.begin(), seconds.end(), 0.0);
}

double Accounting::overhead() const noexcept
{
    return (*this)[Category::LocalIo] + (*this)[Category::Transfer] + (*this)[Category::Submission] +
           (*this)[Category::Init];
}

void SimClock::advance(double seconds)
{
    if (!(seconds >= 0.0) || !std::isfinite(seconds))
    {
        throw Error(ErrorCode::InvalidArgument, "clock: cannot advance by a negative or non-finite amount");
    }
    now_ += seconds;
}

FabricConfig default_fabric_config()
{
    FabricConfig cfg;
    NodeSpec darkstar;
    darkstar.name = "darkstar";
    darkstar.location = "NL";
    darkstar.hardware = "Nvidia 8800 Ultra";
    darkstar.capabilities = {Capability::TreeAccelerator};
    NodeSpec zonker;
    zonker.name = "zonker";
    zonker.location = "US";
    zonker.hardware = "GRAPE 6A";
    zonker.capabilities = {Capability::DirectAccelerator};
    cfg.nodes = {darkstar, zonker};
    return cfg;
}

namespace
{

using nlohmann::json;

LinkModel link_from_json(const json& j, LinkModel base)
{
    base.latency = j.value("latency", base.latency);
    base.bandwidth = j.value("bandwidth", base.bandwidth);
    if (!(base.latency >= 0.0) || !(base.bandwidth > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "fabric config: latency must be >= 0 and bandwidth > 0");
    }
    return base;
}

json link_to_json(const LinkModel& l)
{
    return {{"latency", l.latency}, {"bandwidth", l.bandwidth}};
}

} // namespace

FabricConfig parse_fabric_config(std::string_view json_text)
{
    json doc;
    try
    {
        doc = json::parse(json_text);
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorCode::InvalidArgument, std::string("fabric config: ") + e.what());
    }

    try
    {
        FabricConfig cfg;
        const NodeSpec defaults;
        for (const json& n : doc.at("nodes"))
        {
            NodeSpec spec;
            spec.name = n.at("name").get<std::string>();
            spec.location = n.value("location", "");
            spec.hardware = n.value("hardware", "");
            for (const json& c : n.at("capabilities"))
            {
                spec.capabilities.insert(capability_from_string(c.get<std::string>()));
            }
            spec.submission_overhead = n.value("submission_overhead", defaults.submission_overhead);
            spec.init_overhead = n.value("init_overhead", defaults.init_overhead);
            spec.tree_rate = n.value("tree_rate", defaults.tree_rate);
            spec.direct_rate = n.value("direct_rate", defaults.direct_rate);
            cfg.nodes.push_back(std::move(spec));
        }
        if (doc.contains("link"))
        {
            cfg.default_link = link_from_json(doc["link"], cfg.default_link);
        }
        for (const json& l : doc.value("links", json::array()))
        {
            cfg.links.push_back({l.at("from").get<std::string>(), l.at("to").get<std::string>(),
                                 link_from_json(l, cfg.default_link)});
        }
        if (doc.contains("local_io"))
        {
            cfg.local_io.latency = doc["local_io"].value("latency", cfg.local_io.latency);
            cfg.local_io.bandwidth = doc["local_io"].value("bandwidth", cfg.local_io.bandwidth);
        }
        cfg.jitter = doc.value("jitter", 0.0);
        cfg.jitter_seed = doc.value("jitter_seed", std::uint64_t{1});
        return cfg;
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorCode::InvalidArgument, std::string("fabric config: ") + e.what());
    }
}

FabricConfig load_fabric_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw Error(ErrorCode::Io, "fabric config: cannot open " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_fabric_config(buffer.str());
}

std::string to_json(const FabricConfig& cfg)
{
    json doc;
    doc["nodes"] = json::array();
    for (const NodeSpec& n : cfg.nodes)
    {
        json caps = json::array();
        for (const Capability c : n.capabilities)
        {
            caps.push_back(to_string(c));
        }
        doc["nodes"].push_back({{"name", n.name},
                                {"location", n.location},
                                {"hardware", n.hardware},
                                {"capabilities", caps},
                                {"submission_overhead", n.submission_overhead},
                                {"init_overhead", n.init_overhead},
                                {"tree_rate", n.tree_rate},
                                {"direct_rate", n.direct_rate}});
    }
    doc["link"] = link_to_json(cfg.default_link);
    doc["links"] = json::array();
    for (const LinkOverride& l : cfg.links)
    {
        json entry = link_to_json(l.link);
        entry["from"] = l.from;
        entry["to"] = l.to;
        doc["links"].push_back(entry);
    }
    doc["local_io"] = {{"latency", cfg.local_io.latency}, {"bandwidth", cfg.local_io.bandwidth}};
    doc["jitter"] = cfg.jitter;
    doc["jitter_seed"] = cfg.jitter_seed;
    return doc.dump(2);
}

Fabric::Fabric(FabricConfig cfg, const TokenValidator& validator)
    : cfg_(std::move(cfg))
    , validator_(validator)
    , jitter_rng_(cfg_.jitter_seed)
{
    if (!(cfg_.default_link.latency >= 0.0) || !(cfg_.default_link.bandwidth > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "fabric: latency must be >= 0 and bandwidth > 0");
    }
    if (!(cfg_.jitter >= 0.0 && cfg_.jitter < 1.0))
    {
        throw Error(ErrorCode::InvalidArgument, "fabric: jitter must lie in [0, 1)");
    }
    auto specs = std::move(cfg_.nodes);
    cfg_.nodes.clear();
    for (NodeSpec& spec : specs)
    {
        register_node(std::move(spec));
    }
    storage_[std::string(kLauncher)];
}

std::size_t Fabric::register_node(NodeSpec spec)
{
    if (spec.name.empty() || spec.name == kLauncher)
    {
        throw Error(ErrorCode::InvalidArgument, "fabric: invalid node name '" + spec.name + "'");
    }
    if (spec.capabilities.empty())
    {
        throw Error(ErrorCode::InvalidArgument, "fabric: node " + spec.name + " has no capabilities");
    }
    if (!(spec.submission_overhead >= 0.0) || !(spec.init_overhead >= 0.0) || !(spec.tree_rate > 0.0) ||
        !(spec.direct_rate > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "fabric: node " + spec.name + " has invalid cost constants");
    }
    if (has_node(spec.name))
    {
        throw Error(ErrorCode::Conflict, "fabric: node " + spec.name + " is already registered");
    }
    inboxes_[spec.name];
    storage_[spec.name];
    nodes_.push_back(std::move(spec));
    return nodes_.size() - 1;
}

bool Fabric::has_node(const std::string& name) const
{
    return std::any_of(nodes_.begin(), nodes_.end(), [&](const NodeSpec& n) { return n.name == name; });
}

const NodeSpec& Fabric::node(const std::string& name) const
{
    for (const NodeSpec& n : nodes_)
    {
        if (n.name == name)
        {
            return n;
        }
    }
    throw Error(ErrorCode::NotFound, "fabric: unknown node " + name);
}

std::optional<std::string> Fabric::select_node(Capability needed, const std::string& current) const
{
    if (!current.empty() && has_node(current) && node(current).has(needed))
    {
        return current;
    }
    for (const NodeSpec& n : nodes_)
    {
        if (n.has(needed))
        {
            return n.name;
        }
    }
    return std::nullopt;
}

LinkModel Fabric::link(const std::string& from, const std::string& to) const
{
    for (const LinkOverride& l : cfg_.links)
    {
        if ((l.from == from && l.to == to) || (l.from == to && l.to == from))
        {
            return l.link;
        }
    }
    return cfg_.default_link;
}

void Fabric::require_endpoint(const std::string& name) const
{
    if (name != kLauncher && !has_node(name))
    {
        throw Error(ErrorCode::NotFound, "fabric: unknown node " + name);
    }
}

void Fabric::gate(const ProxyToken& token) const
{
    const TokenStatus status = validator_.validate(token, clock_.now());
    if (status != TokenStatus::Valid)
    {
        throw Error(ErrorCode::Authentication,
                    "fabric: token " + token.token_id + " rejected (" + to_string(status) + ")");
    }
}

double Fabric::transfer(std::uint64_t file_size, const std::string& from, const std::string& to,
                        const ProxyToken& token)
{
    require_endpoint(from);
    require_endpoint(to);
    gate(token);
    const double gated_at = clock_.now();
    const LinkModel l = link(from, to);
    double duration = l.latency + static_cast<double>(file_size) / l.bandwidth;
    if (cfg_.jitter > 0.0)
    {
        duration *= 1.0 + cfg_.jitter * std::uniform_real_distribution<double>(-1.0, 1.0)(jitter_rng_);
    }
    book(Category::Transfer, duration);
    audit_.push_back({GatedOperation::Kind::Transfer, token.token_id, gated_at});
    return duration;
}

double Fabric::transfer_file(const std::string& file, const std::string& from, const std::string& to,
                             const ProxyToken& token)
{
    require_endpoint(from);
    require_endpoint(to);
    auto& source = storage_.at(from);
    const auto it = source.find(file);
    if (it == source.end())
    {
        throw Error(ErrorCode::NotFound, "fabric: no file " + file + " on " + from);
    }
    const double duration = transfer(it->second.size(), from, to, token);
    storage_.at(to)[file] = it->second;
    return duration;
}

JobHandle Fabric::submit_job(const JobSpec& job, const ProxyToken& token)
{
    const NodeSpec& target = node(job.target_node);
    gate(token);
    const double gated_at = clock_.now();
    book(Category::Submission, target.submission_overhead);
    audit_.push_back({GatedOperation::Kind::Submission, token.token_id, gated_at});
    JobHandle handle{next_job_++, target.name};
    inboxes_.at(target.name).push_back({handle, job});
    return handle;
}

std::optional<Job> Fabric::take_job(const std::string& node_name)
{
    auto& inbox = inboxes_.at(node(node_name).name);
    if (inbox.empty())
    {
        return std::nullopt;
    }
    Job job = std::move(inbox.front());
    inbox.pop_front();
    return job;
}

void Fabric::book(Category category, double seconds)
{
    if (!(seconds >= 0.0) || !std::isfinite(seconds))
    {
        throw Error(ErrorCode::InvalidArgument, "fabric: cannot book a negative or non-finite duration");
    }
    clock_.advance(seconds);
    accounting_.seconds[static_cast<std::size_t>(category)] += seconds;
}

std::map<std::string, Bytes>& Fabric::storage(const std::string& endpoint)
{
    require_endpoint(endpoint);
    return storage_.at(endpoint);
}

} // namespace living

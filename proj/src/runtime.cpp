#include "living/runtime.hpp"

#include "living/error.hpp"
#include "living/snapshot.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>

namespace living
{

const char* to_string(Phase p) noexcept
{
    switch (p)
    {
    case Phase::Initializing: return "initializing";
    case Phase::Running: return "running";
    case Phase::Switching: return "switching";
    case Phase::Migrating: return "migrating";
    case Phase::Terminated: return "terminated";
    case Phase::Failed: return "failed";
    }
    return "unknown";
}

const char* to_string(FailureReason r) noexcept
{
    switch (r)
    {
    case FailureReason::None: return "none";
    case FailureReason::Revoked: return "revoked";
    case FailureReason::Expired: return "expired";
    case FailureReason::Authentication: return "authentication";
    case FailureReason::Diverged: return "diverged";
    case FailureReason::NoResource: return "no-resource";
    }
    return "unknown";
}

const char* to_string(Decision d) noexcept
{
    switch (d)
    {
    case Decision::Stay: return "stay";
    case Decision::SwitchToDirect: return "switch-to-direct";
    case Decision::SwitchToTree: return "switch-to-tree";
    case Decision::Terminate: return "terminate";
    }
    return "unknown";
}

const char* to_string(TimingMode m) noexcept
{
    return m == TimingMode::Measured ? "measured" : "modeled";
}

bool legal_transition(Phase from, Phase to) noexcept
{
    switch (from)
    {
    case Phase::Initializing: return to == Phase::Running || to == Phase::Failed;
    case Phase::Running: return to == Phase::Switching || to == Phase::Terminated || to == Phase::Failed;
    case Phase::Switching: return to == Phase::Running || to == Phase::Migrating;
    case Phase::Migrating: return to == Phase::Running || to == Phase::Failed;
    case Phase::Terminated:
    case Phase::Failed: return false;
    }
    return false;
}

void transition(RunState& state, Phase next)
{
    if (!legal_transition(state.phase, next))
    {
        throw Error(ErrorCode::InvalidState,
                    std::string("runtime: illegal transition ") + to_string(state.phase) + " -> " + to_string(next));
    }
    state.phase = next;
}

SolverKind solver_for(double r_smbh, const SwitchPolicy& policy) noexcept
{
    return r_smbh < policy.r_a ? SolverKind::Direct : SolverKind::Tree;
}

Capability capability_for(SolverKind solver) noexcept
{
    return solver == SolverKind::Tree ? Capability::TreeAccelerator : Capability::DirectAccelerator;
}

Decision evaluate_switch(const RunState& state, const SwitchPolicy& policy, double t_end)
{
    if (state.phase != Phase::Running)
    {
        throw Error(ErrorCode::InvalidState, "evaluate_switch: run is not in the running phase");
    }
    const double r = bh_separation(state.snapshot);
    if (state.snapshot.time >= t_end)
    {
        return Decision::Terminate;
    }
    const SolverKind wanted = solver_for(r, policy);
    if (wanted == state.current_solver)
    {
        return Decision::Stay;
    }
    return wanted == SolverKind::Direct ? Decision::SwitchToDirect : Decision::SwitchToTree;
}

std::string Event::to_line() const
{
    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["clock"] = clock;
    j["time"] = time;
    for (const auto& [key, value] : data.items())
    {
        j[key] = value;
    }
    return j.dump();
}

void EventLog::append(Event event)
{
    events_.push_back(std::move(event));
    if (sink_)
    {
        sink_(events_.back());
    }
}

std::string EventLog::to_jsonl() const
{
    std::string out;
    for (const Event& e : events_)
    {
        out += e.to_line();
        out += '\n';
    }
    return out;
}

void validate(const LivingConfig& cfg)
{
    validate(cfg.tree);
    validate(cfg.direct);
    const SwitchPolicy& p = cfg.policy;
    if (!(p.r_a >= 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "policy: r_a must be >= 0");
    }
    if (!(p.check_interval > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "policy: check_interval must be positive");
    }
    const double per_step = p.check_interval / cfg.tree.dt;
    if (std::abs(per_step - std::round(per_step)) > 1e-9 || std::round(per_step) < 1.0)
    {
        throw Error(ErrorCode::InvalidArgument, "policy: check_interval must be an integer multiple of the tree dt");
    }
    if (std::fmod(p.check_interval, cfg.direct.dt_min) != 0.0)
    {
        throw Error(ErrorCode::InvalidArgument, "policy: check_interval must be a multiple of the direct dt_min");
    }
    if (cfg.tree.softening != cfg.direct.softening)
    {
        throw Error(ErrorCode::InvalidArgument, "config: tree and direct softening must agree");
    }
    if (!(cfg.t_end > 0.0) || !(cfg.proxy_duration > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "config: t_end and proxy_duration must be positive");
    }
}

namespace
{

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

FailureReason reason_from(ErrorCode code)
{
    switch (code)
    {
    case ErrorCode::Revoked: return FailureReason::Revoked;
    case ErrorCode::Expired: return FailureReason::Expired;
    default: return FailureReason::Authentication;
    }
}

FailureReason reason_from(TokenStatus status)
{
    switch (status)
    {
    case TokenStatus::Revoked: return FailureReason::Revoked;
    case TokenStatus::Expired: return FailureReason::Expired;
    default: return FailureReason::Authentication;
    }
}

void emit(RuntimeContext& ctx, const RunState& state, std::string kind, nlohmann::ordered_json data)
{
    ctx.log.append({std::move(kind), ctx.fabric.clock().now(), state.snapshot.time, std::move(data)});
}

void set_phase(RuntimeContext& ctx, RunState& state, Phase next)
{
    const Phase from = state.phase;
    transition(state, next);
    emit(ctx, state, "phase",
         {{"from", to_string(from)}, {"to", to_string(next)}, {"node", state.current_node},
          {"solver", to_string(state.current_solver)}});
}

void fail(RuntimeContext& ctx, RunState& state, FailureReason reason, const std::string& message)
{
    state.failure = reason;
    set_phase(ctx, state, Phase::Failed);
    emit(ctx, state, "failure", {{"reason", to_string(reason)}, {"message", message}});
}

// Overheads are simulated in both timing modes.
double local_io_cost(const RuntimeContext& ctx, std::uint64_t bytes, std::size_t files)
{
    const LocalIoModel& io = ctx.fabric.local_io();
    return static_cast<double>(files) * io.latency + static_cast<double>(bytes) / io.bandwidth;
}

void book(RuntimeContext& ctx, const RunState& state, Category category, double seconds)
{
    ctx.fabric.book(category, seconds);
    emit(ctx, state, "book", {{"category", to_string(category)}, {"seconds", seconds}});
}

Bytes to_bytes(const std::string& s)
{
    Bytes out(s.size());
    std::transform(s.begin(), s.end(), out.begin(), [](char c) { return static_cast<std::byte>(c); });
    return out;
}


std::string params_document(const LivingConfig& cfg)
{
    nlohmann::ordered_json j;
    j["tree"] = {{"theta", cfg.tree.theta}, {"softening", cfg.tree.softening}, {"dt", cfg.tree.dt}};
    j["direct"] = {{"eta", cfg.direct.eta},
                   {"dt_max", cfg.direct.dt_max},
                   {"dt_min", cfg.direct.dt_min},
                   {"softening", cfg.direct.softening}};
    return j.dump();
}

// Declarative job script: names the task and where its inputs live. The
// executor on each node interprets it; no code travels.
std::string task_descriptor(const RunState& state, SolverKind solver, const LivingConfig& cfg,
                            const std::string& snapshot_file, const std::string& params_file)
{
    nlohmann::ordered_json j;
    j["task"] = to_string(solver);
    j["snapshot"] = snapshot_file;
    j["params"] = params_file;
    j["policy"] = {{"r_a", std::isinf(cfg.policy.r_a) ? nlohmann::ordered_json("inf")
                                                       : nlohmann::ordered_json(cfg.policy.r_a)},
                   {"check_interval", cfg.policy.check_interval}};
    j["t_end"] = cfg.t_end;
    j["credential"] = state.credential_id;
    return j.dump();
}

/// Steps 1-6 of a site switch from `from` to `to`. Returns the failure
/// reason, leaving `state` untouched, or nullopt after installing the
/// delivered snapshot on the target.
std::optional<std::pair<FailureReason, std::string>> ship(RunState& state, const std::string& from,
                                                          const std::string& to, SolverKind solver,
                                                          RuntimeContext& ctx)
{
    Fabric& fabric = ctx.fabric;
    const std::string seq = std::to_string(ctx.migrations != nullptr ? ctx.migrations->size() : 0);
    const std::string snapshot_file = "snapshot-" + seq + ".bin";
    const std::string params_file = "params-" + seq + ".json";
    const std::string task_file = "task-" + seq + ".json";

    // (1) application state, parameters and job script on the local disk.
    Bytes snapshot_bytes = encode_snapshot(state.snapshot);
    const std::string descriptor = task_descriptor(state, solver, ctx.config, snapshot_file, params_file);
    auto& local = fabric.storage(from);
    local[snapshot_file] = snapshot_bytes;
    local[params_file] = to_bytes(params_document(ctx.config));
    local[task_file] = to_bytes(descriptor);
    const std::uint64_t written = local[snapshot_file].size() + local[params_file].size() + local[task_file].size();
    book(ctx, state, Category::LocalIo, local_io_cost(ctx, written, 3));
    const std::uint32_t crc_source = crc32_of(snapshot_bytes);

    // (2) job definition.
    JobSpec job;
    job.target_node = to;
    for (const std::string* name : {&snapshot_file, &params_file, &task_file})
    {
        job.input_files.push_back({*name, local[*name].size()});
    }
    job.task_descriptor = descriptor;

    // (3) authenticate with the embedded password.
    try
    {
        job.token = ctx.credstore.issue_proxy(state.credential_id, state.password, ctx.config.proxy_duration,
                                              fabric.clock().now());
    }
    catch (const Error& e)
    {
        return std::pair{reason_from(e.code()), std::string(e.what())};
    }
    state.token = job.token;
    emit(ctx, state, "authenticated", {{"token", job.token.token_id}, {"token_expires_at", job.token.expires_at}});

    // (4) transfer and (5) submit; a rejected token leaves nothing behind.
    auto& remote = fabric.storage(to);
    try
    {
        for (const FileRef& f : job.input_files)
        {
            const double seconds = fabric.transfer_file(f.name, from, to, job.token);
            emit(ctx, state, "book", {{"category", to_string(Category::Transfer)}, {"seconds", seconds}});
        }
        fabric.submit_job(job, job.token);
        emit(ctx, state, "book",
             {{"category", to_string(Category::Submission)}, {"seconds", fabric.node(to).submission_overhead}});
    }
    catch (const Error& e)
    {
        if (e.code() != ErrorCode::Authentication)
        {
            throw;
        }
        for (const FileRef& f : job.input_files)
        {
            remote.erase(f.name);
        }
        return std::pair{reason_from(ctx.credstore.validate(job.token, fabric.clock().now())), std::string(e.what())};
    }

    // (6) the target's executor picks up the job script and reinitialises.
    const std::optional<Job> delivered = fabric.take_job(to);
    if (!delivered || delivered->spec.task_descriptor != descriptor)
    {
        throw Error(ErrorCode::InvalidState, "runtime: submitted job was not delivered to " + to);
    }
    const auto script = nlohmann::json::parse(delivered->spec.task_descriptor);
    const Bytes& received = remote.at(script.at("snapshot").get<std::string>());
    ParticleSet restored = decode_snapshot(received);
    const double read_cost = local_io_cost(ctx, received.size(), 1);

    MigrationRecord record;
    record.from = from;
    record.to = to;
    record.time = state.snapshot.time;
    record.bytes = received.size();
    record.crc_source = crc_source;
    record.crc_target = crc32_of(received);
    record.identical = received == snapshot_bytes && encode_snapshot(restored) == snapshot_bytes;
    if (ctx.migrations != nullptr)
    {
        ctx.migrations->push_back(record);
    }
    emit(ctx, state, "migration",
         {{"from", from}, {"to", to}, {"solver", to_string(solver)}, {"bytes", record.bytes},
          {"crc_source", record.crc_source}, {"crc_target", record.crc_target}, {"identical", record.identical}});

    book(ctx, state, Category::Init, fabric.node(to).init_overhead + read_cost);
    state.snapshot = std::move(restored);
    state.current_node = to;
    state.current_solver = solver;
    return std::nullopt;
}

RunState launch(RunState state, const std::string& target, SolverKind solver, RuntimeContext& ctx)
{
    if (!ctx.fabric.node(target).has(capability_for(solver)))
    {
        throw Error(ErrorCode::InvalidArgument, "launch: " + target + " cannot run the " + to_string(solver) + " solver");
    }
    state.current_solver = solver;
    if (auto failure = ship(state, std::string(Fabric::kLauncher), target, solver, ctx))
    {
        fail(ctx, state, failure->first, failure->second);
        return state;
    }
    set_phase(ctx, state, Phase::Running);
    return state;
}

} // namespace

RunState perform_migration(RunState state, const std::string& target, SolverKind next, RuntimeContext& ctx)
{
    if (state.phase != Phase::Switching)
    {
        throw Error(ErrorCode::InvalidState, "perform_migration: run is not switching");
    }
    if (!ctx.fabric.node(target).has(capability_for(next)))
    {
        throw Error(ErrorCode::InvalidArgument,
                    "perform_migration: " + target + " cannot run the " + to_string(next) + " solver");
    }

    if (target == state.current_node)
    {
        // Task switch in place: finalise the old solver, start the new one.
        const Bytes bytes = encode_snapshot(state.snapshot);
        book(ctx, state, Category::LocalIo, local_io_cost(ctx, bytes.size(), 1));
        ParticleSet restored = decode_snapshot(bytes);
        book(ctx, state, Category::Init,
             ctx.fabric.node(target).init_overhead + local_io_cost(ctx, bytes.size(), 1));
        state.snapshot = std::move(restored);
        state.current_solver = next;
        ++state.switch_count;
        set_phase(ctx, state, Phase::Running);
        return state;
    }

    set_phase(ctx, state, Phase::Migrating);
    const std::string source = state.current_node;
    if (auto failure = ship(state, source, target, next, ctx))
    {
        fail(ctx, state, failure->first, failure->second);
        return state;
    }
    ++state.switch_count;
    set_phase(ctx, state, Phase::Running);
    return state;
}

namespace
{

class LivingRun
{
public:
    LivingRun(const ParticleSet& initial, const LivingConfig& cfg, Fabric& fabric, CredentialStore& credstore,
              EventSink sink)
        : cfg_(cfg)
        , log_(std::move(sink))
        , ctx_{fabric, credstore, log_, cfg_, &migrations_}
    {
        state_.snapshot = initial;
        state_.credential_id = cfg.credential_id;
        state_.password = cfg.password;
    }

    RunOutcome run()
    {
        validate(cfg_);
        const double softening = cfg_.tree.softening;
        const double e0 = total_energy(state_.snapshot, softening).total;
        const double t0 = state_.snapshot.time;
        const double steps = (cfg_.t_end - t0) / cfg_.policy.check_interval;
        if (!(steps >= 0.0) || std::abs(steps - std::round(steps)) > 1e-9)
        {
            throw Error(ErrorCode::InvalidArgument, "run: t_end must lie a whole number of check intervals ahead");
        }
        const auto checks = static_cast<std::uint64_t>(std::round(steps));

        emit(ctx_, state_, "phase", {{"from", nullptr}, {"to", to_string(Phase::Initializing)}});
        const double r0 = bh_separation(state_.snapshot);
        const SolverKind first = solver_for(r0, cfg_.policy);
        emit(ctx_, state_, "check",
             {{"r_smbh", r0}, {"solver", to_string(first)}, {"decision", "launch"}});

        if (const auto node = ctx_.fabric.select_node(capability_for(first)))
        {
            state_ = launch(std::move(state_), *node, first, ctx_);
        }
        else
        {
            fail(ctx_, state_, FailureReason::NoResource, "no node offers the " + std::string(to_string(first)) + " solver");
        }

        std::uint64_t k = 0;
        while (state_.phase == Phase::Running)
        {
            try
            {
                if (state_.current_solver == SolverKind::Tree)
                {
                    run_tree(k, checks, t0);
                }
                else
                {
                    run_direct(k, checks, t0);
                }
            }
            catch (const Error& e)
            {
                if (e.code() != ErrorCode::Diverged)
                {
                    throw;
                }
                fail(ctx_, state_, FailureReason::Diverged, e.what());
            }
        }
        return finish(e0);
    }

private:
    // One solver segment: integrate check interval by check interval until a
    // check decides to switch, terminate or fail.
    void run_tree(std::uint64_t& k, std::uint64_t checks, double t0)
    {
        const auto steps_per_check = static_cast<std::uint64_t>(std::round(cfg_.policy.check_interval / cfg_.tree.dt));
        auto start = Clock::now();
        LeapfrogIntegrator integrator(state_.snapshot, cfg_.tree);
        std::uint64_t counted = 0;
        while (k < checks)
        {
            for (std::uint64_t s = 0; s < steps_per_check; ++s)
            {
                integrator.step();
            }
            ++k;
            state_.snapshot = integrator.state();
            const std::uint64_t work = integrator.interactions() - counted;
            counted = integrator.interactions();
            if (!after_interval(k, checks, t0, Category::Tree, work, seconds_since(start)))
            {
                return;
            }
            start = Clock::now();
        }
    }

    void run_direct(std::uint64_t& k, std::uint64_t checks, double t0)
    {
        // Every check instant must be a block boundary at which all particles
        // are synchronised, so no step may straddle one.
        DirectParams params = cfg_.direct;
        while (std::fmod(cfg_.policy.check_interval, params.dt_max) != 0.0)
        {
            params.dt_max *= 0.5;
        }
        params.dt_min = std::min(params.dt_min, params.dt_max);

        auto start = Clock::now();
        HermiteIntegrator integrator(state_.snapshot, params);
        std::uint64_t counted = 0;
        while (k < checks)
        {
            integrator.advance_to(t0 + static_cast<double>(k + 1) * cfg_.policy.check_interval);
            ++k;
            state_.snapshot = integrator.state();
            const std::uint64_t work = integrator.interactions() - counted;
            counted = integrator.interactions();
            if (!after_interval(k, checks, t0, Category::Direct, work, seconds_since(start)))
            {
                return;
            }
            start = Clock::now();
        }
    }

    // Books the interval's solver time, renews privileges and evaluates the
    // switch predicate. Returns true to keep integrating with this solver.
    bool after_interval(std::uint64_t k, std::uint64_t checks, double t0, Category category, std::uint64_t work,
                        double wall)
    {
        if (k == checks)
        {
            state_.snapshot.time = cfg_.t_end;
        }
        else
        {
            state_.snapshot.time = t0 + static_cast<double>(k) * cfg_.policy.check_interval;
        }
        const NodeSpec& node = ctx_.fabric.node(state_.current_node);
        double solver_seconds = wall;
        if (cfg_.timing == TimingMode::Modeled)
        {
            const double rate = category == Category::Tree ? node.tree_rate : node.direct_rate;
            solver_seconds = static_cast<double>(work) / rate;
        }
        ctx_.fabric.book(category, solver_seconds);

        if (!heartbeat())
        {
            return false;
        }

        const Decision decision = evaluate_switch(state_, cfg_.policy, cfg_.t_end);
        emit(ctx_, state_, "check",
             {{"r_smbh", bh_separation(state_.snapshot)}, {"solver", to_string(state_.current_solver)},
              {"decision", to_string(decision)}, {"solver_seconds", solver_seconds}, {"interactions", work}});

        switch (decision)
        {
        case Decision::Stay: return true;
        case Decision::Terminate: set_phase(ctx_, state_, Phase::Terminated); return false;
        case Decision::SwitchToDirect:
        case Decision::SwitchToTree: break;
        }

        const SolverKind next = decision == Decision::SwitchToDirect ? SolverKind::Direct : SolverKind::Tree;
        const auto target = ctx_.fabric.select_node(capability_for(next), state_.current_node);
        if (!target)
        {
            fail(ctx_, state_, FailureReason::NoResource, "no node offers the " + std::string(to_string(next)) + " solver");
            return false;
        }
        set_phase(ctx_, state_, Phase::Switching);
        state_ = perform_migration(std::move(state_), *target, next, ctx_);
        return false;
    }

    // Keeps a valid proxy token in hand; a revoked or expired credential
    // stops the run here.
    bool heartbeat()
    {
        const double now = ctx_.fabric.clock().now();
        const TokenStatus status = ctx_.credstore.validate(state_.token, now);
        if (status == TokenStatus::Valid)
        {
            return true;
        }
        if (status == TokenStatus::Revoked)
        {
            fail(ctx_, state_, FailureReason::Revoked, "credential revoked");
            return false;
        }
        try
        {
            state_.token = ctx_.credstore.issue_proxy(state_.credential_id, state_.password, cfg_.proxy_duration, now);
            emit(ctx_, state_, "authenticated",
                 {{"token", state_.token.token_id}, {"token_expires_at", state_.token.expires_at}});
            return true;
        }
        catch (const Error& e)
        {
            fail(ctx_, state_, reason_from(e.code()), e.what());
            return false;
        }
    }

    RunOutcome finish(double e0)
    {
        RunOutcome out;
        RunReport& r = out.report;
        r.times = ctx_.fabric.accounting();
        r.total = r.times.total();
        r.switch_count = state_.switch_count;
        r.energy_initial = e0;
        r.energy_final = total_energy(state_.snapshot, cfg_.tree.softening).total;
        r.dE_over_E = std::abs(r.energy_final - e0) / std::abs(e0);
        r.time_reached = state_.snapshot.time;
        r.final_phase = state_.phase;
        r.failure = state_.failure;
        for (auto it = log_.events().rbegin(); it != log_.events().rend(); ++it)
        {
            if (it->kind == "failure")
            {
                r.failure_message = it->data.value("message", "");
                break;
            }
        }
        if (state_.phase == Phase::Terminated)
        {
            emit(ctx_, state_, "report",
                 {{"switch_count", r.switch_count}, {"dE_over_E", r.dE_over_E}, {"total", r.total}});
        }
        out.events = log_.events();
        out.migrations = migrations_;
        out.final_snapshot = state_.snapshot;
        return out;
    }

    const LivingConfig& cfg_;
    EventLog log_;
    std::vector<MigrationRecord> migrations_;
    RuntimeContext ctx_;
    RunState state_;
};

} // namespace

RunOutcome run_living_simulation(const ParticleSet& initial, const LivingConfig& cfg, Fabric& fabric,
                                 CredentialStore& credstore, EventSink sink)
{
    LivingRun run(initial, cfg, fabric, credstore, std::move(sink));
    return run.run();
}

int replay_switch_count(const std::vector<Event>& events, double r_a)
{
    int changes = 0;
    std::optional<bool> previous;
    for (const Event& e : events)
    {
        if (e.kind != "check" || e.data.value("decision", "") == "terminate")
        {
            continue;
        }
        const bool close = e.data.at("r_smbh").get<double>() < r_a;
        if (previous && *previous != close)
        {
            ++changes;
        }
        previous = close;
    }
    return changes;
}

} // namespace living

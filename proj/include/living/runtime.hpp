#pragma once

#include "living/credstore.hpp"
#include "living/direct.hpp"
#include "living/fabric.hpp"
#include "living/nbody.hpp"
#include "living/solver.hpp"
#include "living/tree.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

// The living application: a run that watches its own SMBH separation, picks
// the solver and node it needs, and moves itself through the grid fabric
// without an external manager.

namespace living
{

enum class Phase
{
    Initializing,
    Running,
    Switching,
    Migrating,
    Terminated,
    Failed,
};

enum class FailureReason
{
    None,
    Revoked,
    Expired,
    Authentication,
    Diverged,
    NoResource,
};

enum class Decision
{
    Stay,
    SwitchToDirect,
    SwitchToTree,
    Terminate,
};

enum class TimingMode
{
    // Solver columns are wall-clock of the kernels; not reproducible.
    Measured,
    // Solver columns come from force-evaluation counts and node rates.
    Modeled,
};

const char* to_string(Phase p) noexcept;
const char* to_string(FailureReason r) noexcept;
const char* to_string(Decision d) noexcept;
const char* to_string(TimingMode m) noexcept;

/// Whether `from -> to` is a legal run-state transition.
bool legal_transition(Phase from, Phase to) noexcept;

struct SwitchPolicy
{
    double r_a = std::sqrt(0.3);
    double check_interval = 1.0 / 64.0;
};

/// Direct below r_a, tree at or above it.
SolverKind solver_for(double r_smbh, const SwitchPolicy& policy) noexcept;
Capability capability_for(SolverKind solver) noexcept;

struct RunReport
{
    Accounting times;
    int switch_count = 0;
    double dE_over_E = 0.0;
    double total = 0.0;
    double energy_initial = 0.0;
    double energy_final = 0.0;
    double time_reached = 0.0;
    Phase final_phase = Phase::Initializing;
    FailureReason failure = FailureReason::None;
    std::string failure_message;
};

struct RunState
{
    Phase phase = Phase::Initializing;
    FailureReason failure = FailureReason::None;
    std::string current_node;
    SolverKind current_solver = SolverKind::Tree;
    ParticleSet snapshot;
    int switch_count = 0;
    // The application's own means of authenticating.
    std::string credential_id;
    std::string password;
    ProxyToken token;
};

/// Moves state to `next`, throwing InvalidState on an illegal transition.
void transition(RunState& state, Phase next);

Decision evaluate_switch(const RunState& state, const SwitchPolicy& policy, double t_end);

struct Event
{
    std::string kind;
    double clock = 0.0;
    double time = 0.0;
    nlohmann::ordered_json data;

    [[nodiscard]] std::string to_line() const;
};

using EventSink = std::function<void(const Event&)>;

/// Append-only event record; one JSON object per line.
class EventLog
{
public:
    explicit EventLog(EventSink sink = {})
        : sink_(std::move(sink))
    {
    }

    void append(Event event);
    [[nodiscard]] const std::vector<Event>& events() const noexcept { return events_; }
    [[nodiscard]] std::string to_jsonl() const;

private:
    std::vector<Event> events_;
    EventSink sink_;
};

struct MigrationRecord
{
    std::string from;
    std::string to;
    double time = 0.0;
    std::uint64_t bytes = 0;
    std::uint32_t crc_source = 0;
    std::uint32_t crc_target = 0;
    bool identical = false;
};

struct LivingConfig
{
    SwitchPolicy policy;
    TreeParams tree;
    DirectParams direct;
    double t_end = 20.0;
    TimingMode timing = TimingMode::Modeled;
    std::string credential_id;
    std::string password;
    // Requested lifetime of each proxy token (simulated seconds).
    double proxy_duration = 3600.0;
};

void validate(const LivingConfig& cfg);

/// Everything a migration step touches besides the run state itself.
struct RuntimeContext
{
    Fabric& fabric;
    CredentialStore& credstore;
    EventLog& log;
    const LivingConfig& config;
    std::vector<MigrationRecord>* migrations = nullptr;
};

/// Six-step site switch: serialise, job definition, authenticate, transfer,
/// submit, reinitialise. On an authentication failure the run fails closed
/// with its snapshot untouched and nothing left on the target.
RunState perform_migration(RunState state, const std::string& target, SolverKind next, RuntimeContext& ctx);

struct RunOutcome
{
    RunReport report;
    std::vector<Event> events;
    std::vector<MigrationRecord> migrations;
    ParticleSet final_snapshot;
};

/// Launches and runs the living simulation from `initial` to cfg.t_end.
/// The caller only sees the outcome and, through `sink`, the event stream.
RunOutcome run_living_simulation(const ParticleSet& initial, const LivingConfig& cfg, Fabric& fabric,
                                 CredentialStore& credstore, EventSink sink = {});

/// Sign changes of [r < r_a] over the logged predicate checks, ignoring the
/// final terminating check.
int replay_switch_count(const std::vector<Event>& events, double r_a);

} // namespace living

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"
#include "living/error.hpp"
#include "living/runtime.hpp"
#include "living/snapshot.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

using namespace living;

namespace
{

constexpr double kInf = std::numeric_limits<double>::infinity();

RunState switching_on(const std::string& node, const fixture::Grid& grid, ParticleSet snapshot)
{
    RunState s;
    s.phase = Phase::Switching;
    s.current_node = node;
    s.current_solver = SolverKind::Tree;
    s.snapshot = std::move(snapshot);
    s.credential_id = grid.credential;
    s.password = fixture::kPassword;
    return s;
}

int count_kind(const std::vector<Event>& events, const std::string& kind)
{
    int n = 0;
    for (const Event& e : events)
    {
        n += e.kind == kind ? 1 : 0;
    }
    return n;
}

RunState running_with(double r, SolverKind solver, double time = 1.0)
{
    RunState s;
    s.phase = Phase::Running;
    s.current_solver = solver;
    s.snapshot = fixture::kepler_particles(0.5 * r, 0.0);
    s.snapshot.time = time;
    return s;
}

} // namespace

TEST_CASE("transition table admits exactly the run-state edges")
{
    const std::set<std::pair<Phase, Phase>> legal{
        {Phase::Initializing, Phase::Running}, {Phase::Initializing, Phase::Failed},
        {Phase::Running, Phase::Switching},    {Phase::Running, Phase::Terminated},
        {Phase::Running, Phase::Failed},       {Phase::Switching, Phase::Running},
        {Phase::Switching, Phase::Migrating},  {Phase::Migrating, Phase::Running},
        {Phase::Migrating, Phase::Failed},
    };
    const Phase all[] = {Phase::Initializing, Phase::Running,    Phase::Switching,
                         Phase::Migrating,    Phase::Terminated, Phase::Failed};
    for (Phase from : all)
    {
        for (Phase to : all)
        {
            CAPTURE(to_string(from));
            CAPTURE(to_string(to));
            CHECK(legal_transition(from, to) == (legal.count({from, to}) == 1));
        }
    }
    RunState s;
    s.phase = Phase::Terminated;
    CHECK_THROWS_AS(transition(s, Phase::Running), Error);
    CHECK(s.phase == Phase::Terminated);
}

TEST_CASE("switch predicate uses strict less-than toward direct")
{
    SwitchPolicy policy;
    const double ra = std::sqrt(0.3);

    CHECK(evaluate_switch(running_with(0.5, SolverKind::Tree), policy, 20.0) == Decision::SwitchToDirect);
    CHECK(evaluate_switch(running_with(0.5, SolverKind::Direct), policy, 20.0) == Decision::Stay);

    // Equality belongs to the tree side.
    RunState at_threshold = running_with(1.0, SolverKind::Direct);
    policy.r_a = bh_separation(at_threshold.snapshot);
    CHECK(evaluate_switch(at_threshold, policy, 20.0) == Decision::SwitchToTree);
    at_threshold.current_solver = SolverKind::Tree;
    CHECK(evaluate_switch(at_threshold, policy, 20.0) == Decision::Stay);

    policy.r_a = 0.0;
    CHECK(evaluate_switch(running_with(1e-12, SolverKind::Tree), policy, 20.0) == Decision::Stay);
    policy.r_a = kInf;
    CHECK(evaluate_switch(running_with(1e6, SolverKind::Tree), policy, 20.0) == Decision::SwitchToDirect);

    policy.r_a = ra;
    CHECK(evaluate_switch(running_with(0.1, SolverKind::Tree, 20.0), policy, 20.0) == Decision::Terminate);
}

TEST_CASE("switch predicate preconditions")
{
    const SwitchPolicy policy;
    RunState s = running_with(1.0, SolverKind::Tree);
    s.snapshot.particles[1].is_smbh = false;
    try
    {
        (void)evaluate_switch(s, policy, 20.0);
        FAIL("expected an error");
    }
    catch (const Error& e)
    {
        CHECK(e.code() == ErrorCode::InvalidState);
    }
    RunState idle = running_with(1.0, SolverKind::Tree);
    idle.phase = Phase::Switching;
    CHECK_THROWS_AS((void)evaluate_switch(idle, policy, 20.0), Error);
}

TEST_CASE("config validation")
{
    fixture::Grid grid;
    LivingConfig cfg = fixture::config(grid, 0.5, 1.0);
    CHECK_NOTHROW(validate(cfg));

    LivingConfig odd = cfg;
    odd.policy.check_interval = 1.5 * odd.tree.dt;
    CHECK_THROWS_AS(validate(odd), Error);

    LivingConfig soft = cfg;
    soft.direct.softening = 0.02;
    CHECK_THROWS_AS(validate(soft), Error);

    LivingConfig negative = cfg;
    negative.policy.r_a = -1.0;
    CHECK_THROWS_AS(validate(negative), Error);

    LivingConfig no_time = cfg;
    no_time.t_end = 0.0;
    CHECK_THROWS_AS(validate(no_time), Error);

    // t_end must land on a check instant.
    LivingConfig ragged = cfg;
    ragged.t_end = 1.01;
    CHECK_THROWS_AS(run_living_simulation(fixture::merger(64), ragged, *grid.fabric, grid.store), Error);
}

TEST_CASE("healthy migration delivers a bit-identical snapshot")
{
    fixture::Grid grid;
    EventLog log;
    const LivingConfig cfg = fixture::config(grid, std::sqrt(0.3), 20.0);
    std::vector<MigrationRecord> migrations;
    RuntimeContext ctx{*grid.fabric, grid.store, log, cfg, &migrations};

    const ParticleSet snapshot = fixture::merger(2048);
    REQUIRE(snapshot.size() == 2050);
    const RunState after =
        perform_migration(switching_on("darkstar", grid, snapshot), "zonker", SolverKind::Direct, ctx);

    CHECK(after.phase == Phase::Running);
    CHECK(after.current_node == "zonker");
    CHECK(after.current_solver == SolverKind::Direct);
    CHECK(after.switch_count == 1);
    CHECK(after.snapshot == snapshot);
    REQUIRE(migrations.size() == 1);
    CHECK(migrations[0].identical);
    CHECK(migrations[0].crc_source == migrations[0].crc_target);
    CHECK(migrations[0].bytes == encode_snapshot(snapshot).size());

    const Accounting& acc = grid.fabric->accounting();
    for (Category c : {Category::LocalIo, Category::Transfer, Category::Submission, Category::Init})
    {
        CHECK(acc[c] > 0.0);
    }
    CHECK(acc[Category::Tree] == 0.0);
    CHECK(acc[Category::Direct] == 0.0);

    // Steps in order: local-io, authenticate, transfer, submit, init.
    std::vector<std::string> order;
    for (const Event& e : log.events())
    {
        if (e.kind == "book")
        {
            order.push_back(e.data.at("category").get<std::string>());
        }
        else if (e.kind == "authenticated" || e.kind == "migration")
        {
            order.push_back(e.kind);
        }
    }
    CHECK(order == std::vector<std::string>{"local-io", "authenticated", "transfer", "transfer", "transfer",
                                             "submission", "migration", "init"});
    CHECK(grid.fabric->audit().size() == 4);
}

TEST_CASE("revoked credential fails the migration closed")
{
    fixture::Grid grid;
    EventLog log;
    const LivingConfig cfg = fixture::config(grid, std::sqrt(0.3), 20.0);
    std::vector<MigrationRecord> migrations;
    RuntimeContext ctx{*grid.fabric, grid.store, log, cfg, &migrations};
    const ParticleSet snapshot = fixture::merger(256);

    grid.store.revoke(grid.credential);
    const RunState after =
        perform_migration(switching_on("darkstar", grid, snapshot), "zonker", SolverKind::Direct, ctx);

    CHECK(after.phase == Phase::Failed);
    CHECK(after.failure == FailureReason::Revoked);
    CHECK(after.current_node == "darkstar");
    CHECK(after.snapshot == snapshot);
    CHECK(after.switch_count == 0);
    CHECK(migrations.empty());
    CHECK(grid.fabric->storage("zonker").empty());
    CHECK(decode_snapshot(grid.fabric->storage("darkstar").at("snapshot-0.bin")) == snapshot);
    const Accounting& acc = grid.fabric->accounting();
    CHECK(acc[Category::Transfer] == 0.0);
    CHECK(acc[Category::Submission] == 0.0);
    CHECK(acc[Category::Init] == 0.0);
    CHECK(grid.fabric->audit().empty());
}

TEST_CASE("revocation between authentication and transfer leaves nothing on the target")
{
    fixture::Grid grid;
    EventLog log([&](const Event& e) {
        if (e.kind == "authenticated")
        {
            grid.store.revoke(grid.credential);
        }
    });
    const LivingConfig cfg = fixture::config(grid, std::sqrt(0.3), 20.0);
    RuntimeContext ctx{*grid.fabric, grid.store, log, cfg, nullptr};
    const ParticleSet snapshot = fixture::merger(256);

    const RunState after =
        perform_migration(switching_on("darkstar", grid, snapshot), "zonker", SolverKind::Direct, ctx);
    CHECK(after.phase == Phase::Failed);
    CHECK(after.failure == FailureReason::Revoked);
    CHECK(after.snapshot == snapshot);
    CHECK(grid.fabric->storage("zonker").empty());
    CHECK(!grid.fabric->take_job("zonker"));
    CHECK(grid.fabric->accounting()[Category::Transfer] == 0.0);
}

TEST_CASE("capability mismatch is rejected before any step")
{
    fixture::Grid grid;
    EventLog log;
    const LivingConfig cfg = fixture::config(grid, std::sqrt(0.3), 20.0);
    RuntimeContext ctx{*grid.fabric, grid.store, log, cfg, nullptr};
    try
    {
        (void)perform_migration(switching_on("darkstar", grid, fixture::merger(64)), "zonker", SolverKind::Tree, ctx);
        FAIL("expected an error");
    }
    catch (const Error& e)
    {
        CHECK(e.code() == ErrorCode::InvalidArgument);
    }
    CHECK(grid.fabric->clock().now() == 0.0);
    CHECK(log.events().empty());
    CHECK(grid.fabric->storage("darkstar").empty());
}

TEST_CASE("task switch on the same node books only local-io and init")
{
    FabricConfig fc;
    NodeSpec both;
    both.name = "hybrid";
    both.capabilities = {Capability::TreeAccelerator, Capability::DirectAccelerator};
    fc.nodes = {both};
    fixture::Grid grid(fc);
    EventLog log;
    const LivingConfig cfg = fixture::config(grid, std::sqrt(0.3), 20.0);
    RuntimeContext ctx{*grid.fabric, grid.store, log, cfg, nullptr};
    const ParticleSet snapshot = fixture::merger(256);

    const RunState after =
        perform_migration(switching_on("hybrid", grid, snapshot), "hybrid", SolverKind::Direct, ctx);
    CHECK(after.phase == Phase::Running);
    CHECK(after.current_solver == SolverKind::Direct);
    CHECK(after.switch_count == 1);
    CHECK(after.snapshot == snapshot);
    const Accounting& acc = grid.fabric->accounting();
    CHECK(acc[Category::LocalIo] > 0.0);
    CHECK(acc[Category::Init] > 0.0);
    CHECK(acc[Category::Transfer] == 0.0);
    CHECK(acc[Category::Submission] == 0.0);
    CHECK(grid.fabric->audit().empty());
}

TEST_CASE("pure tree and pure direct runs never switch")
{
    const ParticleSet ics = fixture::merger(128);
    {
        fixture::Grid grid;
        const RunOutcome out = run_living_simulation(ics, fixture::config(grid, 0.0, 2.0), *grid.fabric, grid.store);
        CHECK(out.report.final_phase == Phase::Terminated);
        CHECK(out.report.switch_count == 0);
        CHECK(out.report.times[Category::Direct] == 0.0);
        CHECK(out.report.times[Category::Tree] > 0.0);
        CHECK(out.report.time_reached == 2.0);
        REQUIRE(out.migrations.size() == 1);
        CHECK(out.migrations[0].to == "darkstar");
    }
    {
        fixture::Grid grid;
        const RunOutcome out = run_living_simulation(ics, fixture::config(grid, kInf, 2.0), *grid.fabric, grid.store);
        CHECK(out.report.final_phase == Phase::Terminated);
        CHECK(out.report.switch_count == 0);
        CHECK(out.report.times[Category::Tree] == 0.0);
        CHECK(out.report.times[Category::Direct] > 0.0);
        REQUIRE(out.migrations.size() == 1);
        CHECK(out.migrations[0].to == "zonker");
    }
}

TEST_CASE("hybrid run: replay, integrity, accounting closure and event log")
{
    fixture::Grid grid;
    const LivingConfig cfg = fixture::config(grid, std::sqrt(0.3), 20.0);
    std::ostringstream streamed;
    const RunOutcome out = run_living_simulation(fixture::merger(256), cfg, *grid.fabric, grid.store,
                                                 [&](const Event& e) { streamed << e.to_line() << '\n'; });
    REQUIRE(out.report.final_phase == Phase::Terminated);
    CHECK(out.report.switch_count > 0);
    CHECK(out.report.switch_count == replay_switch_count(out.events, cfg.policy.r_a));
    CHECK(out.migrations.size() == static_cast<std::size_t>(out.report.switch_count) + 1);
    for (const MigrationRecord& m : out.migrations)
    {
        CHECK(m.identical);
        CHECK(m.crc_source == m.crc_target);
    }

    double summed = 0.0;
    for (Category c : kCategories)
    {
        summed += out.report.times[c];
    }
    CHECK(out.report.total == doctest::Approx(summed).epsilon(1e-12));
    CHECK(out.report.times.seconds == grid.fabric->accounting().seconds);

    // Every booked second shows up in the log.
    double logged = 0.0;
    double last_clock = 0.0;
    std::istringstream lines(streamed.str());
    std::string line;
    std::size_t parsed = 0;
    while (std::getline(lines, line))
    {
        const auto j = nlohmann::json::parse(line);
        REQUIRE(j.is_object());
        CHECK(j.at("clock").get<double>() >= last_clock);
        last_clock = j.at("clock").get<double>();
        if (j.at("kind") == "book")
        {
            logged += j.at("seconds").get<double>();
        }
        else if (j.at("kind") == "check" && j.contains("solver_seconds"))
        {
            logged += j.at("solver_seconds").get<double>();
        }
        ++parsed;
    }
    CHECK(parsed == out.events.size());
    CHECK(logged == doctest::Approx(out.report.total).epsilon(1e-9));
    CHECK(count_kind(out.events, "migration") == static_cast<int>(out.migrations.size()));
    CHECK(out.events.back().kind == "report");
}

TEST_CASE("modeled runs are reproducible event for event")
{
    auto once = [] {
        fixture::Grid grid;
        const LivingConfig cfg = fixture::config(grid, std::sqrt(0.3), 5.0);
        return run_living_simulation(fixture::merger(128, 7), cfg, *grid.fabric, grid.store);
    };
    const RunOutcome a = once();
    const RunOutcome b = once();
    REQUIRE(a.events.size() == b.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i)
    {
        CHECK(a.events[i].to_line() == b.events[i].to_line());
    }
    CHECK(a.final_snapshot == b.final_snapshot);
}

TEST_CASE("Kepler pair: switch count equals the analytic crossing count")
{
    std::mt19937_64 rng(20240611);
    const double t_end = 10.0;
    const double ci = 1.0 / 64.0;
    for (int trial = 0; trial < 5; ++trial)
    {
        const fixture::KeplerPair pair = fixture::random_kepler(rng, t_end, ci);
        fixture::Grid grid;
        const LivingConfig cfg = fixture::config(grid, pair.r_a, t_end, 0.0);
        const RunOutcome out = run_living_simulation(pair.particles, cfg, *grid.fabric, grid.store);
        REQUIRE(out.report.final_phase == Phase::Terminated);

        // The terminating check at t_end never switches.
        const int expected = oracle::count_crossings(pair.orbit, pair.r_a, 0.0, t_end - ci, ci);
        CAPTURE(trial);
        CAPTURE(pair.r_a);
        CHECK(expected > 0);
        CHECK(out.report.switch_count == expected);
        CHECK(replay_switch_count(out.events, pair.r_a) == expected);

        // Integrated separations track the analytic orbit at every check.
        double worst = 0.0;
        for (const Event& e : out.events)
        {
            if (e.kind == "check")
            {
                worst = std::max(worst, std::abs(e.data.at("r_smbh").get<double>() - pair.orbit.separation(e.time)));
            }
        }
        CHECK(worst < 2e-3);
    }
}

TEST_CASE("energy error ordering: tree > hybrid > direct at N=512")
{
    const ParticleSet ics = fixture::merger(512);
    auto de = [&](double r_a) {
        fixture::Grid grid;
        const RunOutcome out = run_living_simulation(ics, fixture::config(grid, r_a, 20.0), *grid.fabric, grid.store);
        REQUIRE(out.report.final_phase == Phase::Terminated);
        return out.report.dE_over_E;
    };
    const double tree = de(0.0);
    const double hybrid = de(std::sqrt(0.3));
    const double direct = de(kInf);
    CHECK(tree > hybrid);
    CHECK(hybrid > direct);
}

TEST_CASE("revoke during the run fails it with the snapshot intact")
{
    fixture::Grid grid;
    const LivingConfig cfg = fixture::config(grid, std::sqrt(0.3), 5.0);
    bool revoked = false;
    const RunOutcome out =
        run_living_simulation(fixture::merger(128), cfg, *grid.fabric, grid.store, [&](const Event& e) {
            if (!revoked && e.kind == "check" && e.time >= 1.0)
            {
                grid.store.revoke(grid.credential);
                revoked = true;
            }
        });
    CHECK(out.report.final_phase == Phase::Failed);
    CHECK(out.report.failure == FailureReason::Revoked);
    CHECK(out.report.time_reached < cfg.t_end);
    CHECK(out.report.time_reached > 1.0);
    CHECK(std::isfinite(out.report.energy_final));
    CHECK(out.final_snapshot.size() == 130);
    for (const GatedOperation& op : grid.fabric->audit())
    {
        CHECK(grid.store.validate(op.token_id, op.at) != TokenStatus::Unknown);
    }
}

TEST_CASE("short proxies are re-issued; an expired credential stops the run")
{
    SUBCASE("re-issue")
    {
        // Slow tree node: solver time outlives each proxy.
        FabricConfig fc = default_fabric_config();
        fc.nodes[0].tree_rate = 1.0e5;
        fixture::Grid grid(fc);
        LivingConfig cfg = fixture::config(grid, 0.0, 1.0);
        cfg.proxy_duration = 1.5;
        const RunOutcome out = run_living_simulation(fixture::merger(64), cfg, *grid.fabric, grid.store);
        CHECK(out.report.final_phase == Phase::Terminated);
        CHECK(count_kind(out.events, "authenticated") >= 2);
    }
    SUBCASE("expiry")
    {
        FabricConfig fc = default_fabric_config();
        fc.nodes[0].submission_overhead = 10.0;
        fixture::Grid grid(fc, 5.0);
        const RunOutcome out =
            run_living_simulation(fixture::merger(64), fixture::config(grid, 0.0, 1.0), *grid.fabric, grid.store);
        CHECK(out.report.final_phase == Phase::Failed);
        CHECK(out.report.failure == FailureReason::Expired);
    }
}

TEST_CASE("missing capability yields no-resource")
{
    FabricConfig fc = default_fabric_config();
    fc.nodes.resize(1);
    SUBCASE("at launch")
    {
        fixture::Grid grid(fc);
        const RunOutcome out =
            run_living_simulation(fixture::merger(64), fixture::config(grid, kInf, 1.0), *grid.fabric, grid.store);
        CHECK(out.report.final_phase == Phase::Failed);
        CHECK(out.report.failure == FailureReason::NoResource);
        CHECK(grid.fabric->clock().now() == 0.0);
    }
    SUBCASE("mid-run")
    {
        fixture::Grid grid(fc);
        const RunOutcome out = run_living_simulation(fixture::merger(128), fixture::config(grid, std::sqrt(0.3), 20.0),
                                                     *grid.fabric, grid.store);
        CHECK(out.report.final_phase == Phase::Failed);
        CHECK(out.report.failure == FailureReason::NoResource);
        CHECK(out.report.time_reached > 0.0);
    }
}

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include "fixtures.hpp"
#include "living/direct.hpp"
#include "living/error.hpp"
#include "living/experiment.hpp"
#include "living/runtime.hpp"
#include "living/snapshot.hpp"
#include "living/tree.hpp"
#include "oracles.hpp"

#include <zlib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

using namespace living;

namespace
{

// Pinned tolerances and budgets.
constexpr std::size_t kSweepN = 2048;
constexpr std::uint64_t kSeed = 42;
constexpr double kTEnd = 20.0;
constexpr double kDirectMaxError = 1e-5;
constexpr double kTreeMinError = 1e-3;
constexpr double kTreeMaxError = 1e-1;
constexpr double kMaxOverheadShareAtLargestN = 0.15;
constexpr int kCredentialSchedules = 1000;
constexpr double kCredentialBudgetSeconds = 60.0;
constexpr double kTreeOracleTolerance = 1e-10;
constexpr double kSlopeMin = 3.5;
constexpr double kSlopeMax = 4.5;
constexpr double kEnergyOracleTolerance = 1e-13;
constexpr double kGradientTolerance = 1e-6;
constexpr double kTransferTolerance = 1e-6;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Verdict
{
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok)
        {
            pass = false;
            detail << " [violated: " << what << "]";
        }
    }
};

int failures = 0;

void report(int criterion, Verdict& v)
{
    std::printf("criterion %d: %s%s\n", criterion, v.pass ? "PASS" : "FAIL", v.detail.str().c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- shared N=2048 threshold sweep ------------------------------------------

struct SweepRow
{
    std::string label;
    double r_a = 0.0;
    RunOutcome outcome;
    // Migrations whose source and target copies differ, found by comparing
    // the bytes left on each endpoint's disk.
    int mismatched = 0;
    int compared = 0;
};

SweepRow sweep_row(const std::string& label, double r_a, const ParticleSet& ics)
{
    SweepRow row{label, r_a, {}, 0, 0};
    fixture::Grid grid;
    row.outcome = run_living_simulation(ics, fixture::config(grid, r_a, kTEnd), *grid.fabric, grid.store);
    for (std::size_t k = 0; k < row.outcome.migrations.size(); ++k)
    {
        const MigrationRecord& m = row.outcome.migrations[k];
        const std::string file = "snapshot-" + std::to_string(k) + ".bin";
        const auto& src = grid.fabric->storage(m.from);
        const auto& dst = grid.fabric->storage(m.to);
        ++row.compared;
        if (src.count(file) == 0 || dst.count(file) == 0)
        {
            ++row.mismatched;
            continue;
        }
        const Bytes& a = src.at(file);
        const Bytes& b = dst.at(file);
        const auto crc = [](const Bytes& bytes) {
            return static_cast<std::uint32_t>(
                ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
        };
        const bool same = a == b && crc(a) == m.crc_source && crc(b) == m.crc_target &&
                          encode_snapshot(decode_snapshot(b)) == a;
        row.mismatched += same ? 0 : 1;
    }
    return row;
}

std::vector<SweepRow> run_sweep()
{
    const ParticleSet ics = fixture::merger(kSweepN, kSeed);
    std::vector<SweepRow> rows;
    const std::vector<std::pair<std::string, double>> thresholds{
        {"0", 0.0},         {"0.1", 0.1}, {"sqrt(0.1)", std::sqrt(0.1)}, {"sqrt(0.3)", std::sqrt(0.3)},
        {"1", 1.0},         {"sqrt(10)", std::sqrt(10.0)}, {"inf", kInf}};
    for (const auto& [label, r_a] : thresholds)
    {
        rows.push_back(sweep_row(label, r_a, ics));
        const RunReport& r = rows.back().outcome.report;
        std::printf("  sweep r_a=%-9s switches=%-3d migrations=%-3zu dE/E=%.3e phase=%s\n", label.c_str(),
                    r.switch_count, rows.back().outcome.migrations.size(), r.dE_over_E, to_string(r.final_phase));
        std::fflush(stdout);
    }
    return rows;
}

const SweepRow& row_for(const std::vector<SweepRow>& rows, const std::string& label)
{
    for (const SweepRow& r : rows)
    {
        if (r.label == label)
        {
            return r;
        }
    }
    throw Error(ErrorCode::NotFound, "acceptance: no sweep row " + label);
}

void criterion1(const std::vector<SweepRow>& rows)
{
    Verdict v;
    const char* order[] = {"0", "sqrt(0.1)", "sqrt(0.3)", "1", "inf"};
    double previous = kInf;
    for (const char* label : order)
    {
        const RunReport& r = row_for(rows, label).outcome.report;
        v.require(r.final_phase == Phase::Terminated, std::string("run ") + label + " terminated");
        v.detail << " " << label << "=" << r.dE_over_E;
        v.require(r.dE_over_E < previous, std::string("dE/E strictly decreasing at ") + label);
        previous = r.dE_over_E;
    }
    const double direct = row_for(rows, "inf").outcome.report.dE_over_E;
    const double tree = row_for(rows, "0").outcome.report.dE_over_E;
    v.require(direct <= kDirectMaxError, "pure direct dE/E <= 1e-5");
    v.require(tree >= kTreeMinError && tree <= kTreeMaxError, "pure tree dE/E in [1e-3, 1e-1]");
    report(1, v);
}

void criterion2(const std::vector<SweepRow>& rows)
{
    Verdict v;
    std::mt19937_64 rng(0x5eed);
    const double t_end = 10.0;
    const double ci = 1.0 / 64.0;
    for (int trial = 0; trial < 5; ++trial)
    {
        const fixture::KeplerPair pair = fixture::random_kepler(rng, t_end, ci);
        fixture::Grid grid;
        const RunOutcome out = run_living_simulation(pair.particles, fixture::config(grid, pair.r_a, t_end, 0.0),
                                                     *grid.fabric, grid.store);
        const int expected = oracle::count_crossings(pair.orbit, pair.r_a, 0.0, t_end - ci, ci);
        v.detail << " kepler" << trial << "=" << out.report.switch_count << "/" << expected;
        v.require(out.report.final_phase == Phase::Terminated, "kepler run terminated");
        v.require(out.report.switch_count == expected, "kepler switch count equals oracle crossings");
    }
    int previous = std::numeric_limits<int>::max();
    v.detail << " merger:";
    for (const char* label : {"0.1", "sqrt(0.1)", "sqrt(0.3)", "sqrt(10)"})
    {
        const SweepRow& row = row_for(rows, label);
        const int n = row.outcome.report.switch_count;
        v.detail << " " << label << "=" << n;
        v.require(n <= previous, std::string("switch count non-increasing at ") + label);
        v.require(n == replay_switch_count(row.outcome.events, row.r_a), "switch count equals replay");
        previous = n;
    }
    report(2, v);
}

void criterion3()
{
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg = default_experiment(ExperimentMode::NSweep);
    cfg.timing = TimingMode::Modeled;
    cfg.seed = kSeed;
    const ExperimentResults res = run_n_sweep(cfg);
    double previous = kInf;
    for (const RowResult& row : res.rows)
    {
        v.require(!row.failed, "row N=" + std::to_string(row.n) + " completed");
        const double share = row.report.times.overhead() / row.report.total;
        v.detail << " N" << row.n << "=" << share;
        v.require(share < previous, "overhead share strictly decreasing");
        previous = share;
    }
    v.require(previous < kMaxOverheadShareAtLargestN, "largest-N overhead share below 15%");
    v.detail << " (" << seconds_since(t0) << " s)";
    report(3, v);
}

void criterion4(const std::vector<SweepRow>& rows)
{
    Verdict v;
    int compared = 0;
    int mismatched = 0;
    for (const SweepRow& row : rows)
    {
        compared += row.compared;
        mismatched += row.mismatched;
        for (const MigrationRecord& m : row.outcome.migrations)
        {
            mismatched += (m.identical && m.crc_source == m.crc_target) ? 0 : 1;
        }
    }
    v.detail << " migrations=" << compared << " mismatched=" << mismatched;
    v.require(compared > 0, "at least one migration");
    v.require(mismatched == 0, "every delivered snapshot bit-identical");
    report(4, v);
}

// --- credential lifecycle ---------------------------------------------------

struct ScheduleResult
{
    bool ok = true;
    std::string why;
    bool mid_run_revoke = false;
    std::string outcome;
};

ScheduleResult credential_schedule(std::uint64_t seed, const ParticleSet& ics)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double credential_life = 0.5 + 7.5 * u01(rng);
    fixture::Grid grid(default_fabric_config(), credential_life);
    const double r_choices[] = {0.0, 0.5, 1.0, 2.0, kInf};
    LivingConfig cfg = fixture::config(grid, r_choices[rng() % 5], 2.0);
    cfg.proxy_duration = 0.3 + 3.7 * u01(rng);

    struct Action
    {
        std::size_t at_event;
        bool revoke;
        double lifetime;
    };
    std::vector<Action> actions;
    const int n_actions = static_cast<int>(rng() % 4);
    for (int i = 0; i < n_actions; ++i)
    {
        actions.push_back({static_cast<std::size_t>(rng() % 80), u01(rng) < 0.5, 0.5 + 7.5 * u01(rng)});
    }

    ScheduleResult result;
    auto violate = [&](const std::string& why) {
        if (result.ok)
        {
            result.ok = false;
            result.why = why;
        }
    };

    std::map<std::string, double> announced;
    std::size_t seen = 0;
    bool revoked = false;
    bool terminal = false;
    std::size_t audit_at_revoke = 0;

    const RunOutcome out = run_living_simulation(ics, cfg, *grid.fabric, grid.store, [&](const Event& e) {
        if (e.kind == "authenticated")
        {
            announced[e.data.at("token").get<std::string>()] = e.data.at("token_expires_at").get<double>();
        }
        if (e.kind == "phase")
        {
            const std::string to = e.data.at("to").get<std::string>();
            terminal = terminal || to == "failed" || to == "terminated";
        }
        for (const Action& a : actions)
        {
            if (a.at_event != seen)
            {
                continue;
            }
            if (a.revoke)
            {
                if (!revoked)
                {
                    audit_at_revoke = grid.fabric->audit().size();
                    result.mid_run_revoke = !terminal && e.time < cfg.t_end;
                }
                grid.store.revoke(grid.credential);
                revoked = true;
                continue;
            }
            try
            {
                grid.store.renew(grid.credential, fixture::kPassword, a.lifetime, grid.fabric->clock().now());
                if (revoked)
                {
                    violate("renewal of a revoked credential succeeded");
                }
            }
            catch (const Error& err)
            {
                if (!revoked || err.code() != ErrorCode::Revoked)
                {
                    violate(std::string("unexpected renewal error: ") + err.what());
                }
            }
        }
        ++seen;
    });

    // Every gated operation carried an announced token, inside its lifetime,
    // and none happened after the revoke.
    const auto& audit = grid.fabric->audit();
    for (const GatedOperation& op : audit)
    {
        const auto it = announced.find(op.token_id);
        if (it == announced.end())
        {
            violate("gated operation with an unannounced token");
        }
        else if (!(op.at < it->second))
        {
            violate("gated operation at or after token expiry");
        }
    }
    if (revoked && audit.size() != audit_at_revoke)
    {
        violate("gated operation succeeded after revoke");
    }

    // Every token is dead after a revoke, and the fabric refuses it.
    if (revoked)
    {
        const double now = grid.fabric->clock().now();
        for (const auto& [id, expires] : announced)
        {
            ProxyToken t{id, grid.credential, 0.0, expires};
            if (grid.store.validate(t, now) == TokenStatus::Valid || grid.store.validate(t, 0.0) == TokenStatus::Valid)
            {
                violate("token still valid after revoke");
            }
            try
            {
                grid.fabric->transfer(1, "darkstar", "zonker", t);
                violate("fabric accepted a revoked token");
            }
            catch (const Error&)
            {
            }
            if (grid.fabric->clock().now() != now)
            {
                violate("refused transfer advanced the clock");
            }
        }
        try
        {
            (void)grid.store.issue_proxy(grid.credential, fixture::kPassword, 1.0, now);
            violate("issue after revoke succeeded");
        }
        catch (const Error&)
        {
        }
    }

    result.outcome = out.report.final_phase == Phase::Failed ? to_string(out.report.failure)
                                                             : to_string(out.report.final_phase);
    if (result.mid_run_revoke)
    {
        if (out.report.final_phase != Phase::Failed || out.report.failure != FailureReason::Revoked)
        {
            violate(std::string("mid-run revoke ended as ") + to_string(out.report.final_phase) + "/" +
                    to_string(out.report.failure));
        }
        if (!(out.report.time_reached < cfg.t_end))
        {
            violate("mid-run revoke did not stop the run");
        }
    }

    // The source snapshot is intact and nothing of a refused migration
    // reached its target.
    const ParticleSet& final = out.final_snapshot;
    if (final.size() != ics.size())
    {
        violate("final snapshot lost particles");
    }
    for (const Particle& p : final.particles)
    {
        if (!std::isfinite(p.position.x + p.position.y + p.position.z + p.velocity.x + p.velocity.y + p.velocity.z))
        {
            violate("final snapshot is not finite");
            break;
        }
    }
    if (out.report.final_phase == Phase::Failed)
    {
        const std::string pending = "snapshot-" + std::to_string(out.migrations.size()) + ".bin";
        const std::string current =
            out.migrations.empty() ? std::string(Fabric::kLauncher) : out.migrations.back().to;
        for (const std::string& endpoint : {std::string(Fabric::kLauncher), std::string("darkstar"),
                                            std::string("zonker")})
        {
            const auto& disk = grid.fabric->storage(endpoint);
            if (disk.count(pending) == 0)
            {
                continue;
            }
            if (endpoint != current)
            {
                violate("refused migration left a snapshot on " + endpoint);
            }
            else if (!(decode_snapshot(disk.at(pending)) == final))
            {
                violate("source snapshot differs from the run state");
            }
        }
    }
    return result;
}

void criterion5()
{
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    const ParticleSet ics = fixture::merger(16, 5);
    int mid_run = 0;
    int violations = 0;
    std::map<std::string, int> outcomes;
    for (int s = 0; s < kCredentialSchedules; ++s)
    {
        const ScheduleResult r = credential_schedule(static_cast<std::uint64_t>(s), ics);
        mid_run += r.mid_run_revoke ? 1 : 0;
        ++outcomes[r.outcome];
        if (!r.ok)
        {
            if (violations++ < 3)
            {
                v.detail << " [schedule " << s << ": " << r.why << "]";
            }
        }
    }
    const double elapsed = seconds_since(t0);
    v.detail << " schedules=" << kCredentialSchedules << " mid_run_revokes=" << mid_run
             << " violations=" << violations << " (" << elapsed << " s)";
    for (const auto& [name, count] : outcomes)
    {
        v.detail << " " << name << "=" << count;
    }
    v.require(violations == 0, "no schedule violates the credential properties");
    v.require(mid_run > 0, "schedules exercise mid-run revocation");
    v.require(outcomes["expired"] > 0, "schedules exercise credential expiry");
    v.require(elapsed < kCredentialBudgetSeconds, "under one minute");
    report(5, v);
}

// --- numerical oracles ------------------------------------------------------

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

void criterion6()
{
    Verdict v;

    // Tree at theta -> 0 against the direct-sum oracle, n = 256.
    {
        TreeParams params;
        params.theta = 1e-9;
        params.softening = 0.01;
        const ParticleSet ps = make_plummer(256, 1.0, 333);
        const auto got = tree_accel(build_tree(ps), ps, params);
        const auto ref = oracle::accelerations(ps, params.softening);
        double worst = 0.0;
        for (std::size_t i = 0; i < ps.size(); ++i)
        {
            worst = std::max(worst, norm(got[i] - ref[i]) / norm(ref[i]));
        }
        v.detail << " tree=" << worst;
        v.require(worst <= kTreeOracleTolerance, "tree(theta->0) within 1e-10 of direct sum");
    }

    // Hermite convergence: pinned steps halved on an e = 0.5 binary.
    {
        const double e = 0.5;
        const double rp = 1.0 - e;
        const double vp = std::sqrt((1.0 + e) / rp);
        ParticleSet ps;
        ps.particles = {{0, 0.5, {-rp / 2, 0, 0}, {0, -vp / 2, 0}, false},
                        {1, 0.5, {rp / 2, 0, 0}, {0, vp / 2, 0}, false}};
        const double e0 = static_cast<double>(oracle::energy(ps, 0.0));
        std::vector<double> log_h, log_err;
        for (int k = 6; k <= 9; ++k)
        {
            DirectParams p;
            p.softening = 0.0;
            p.dt_max = p.dt_min = std::ldexp(1.0, -k);
            const double e1 = static_cast<double>(oracle::energy(direct_evolve(ps, p, 8.0), 0.0));
            log_h.push_back(std::log(p.dt_max));
            log_err.push_back(std::log(std::abs((e1 - e0) / e0)));
        }
        const double slope = least_squares_slope(log_h, log_err);
        v.detail << " slope=" << slope;
        v.require(slope >= kSlopeMin && slope <= kSlopeMax, "Hermite convergence slope in [3.5, 4.5]");
    }

    // total_energy against the long-double double loop.
    {
        double worst = 0.0;
        for (const std::size_t n : {64u, 1024u})
        {
            const ParticleSet ps = make_plummer(n, 1.0, 900 + n);
            for (const double eps : {0.0, 0.01})
            {
                const double ref = static_cast<double>(oracle::energy(ps, eps));
                worst = std::max(worst, std::abs((total_energy(ps, eps).total - ref) / ref));
            }
        }
        v.detail << " energy=" << worst;
        v.require(worst <= kEnergyOracleTolerance, "total_energy within 1e-13 of the oracle");
    }

    // Acceleration against a central-difference gradient of the potential.
    {
        const ParticleSet ps = make_plummer(64, 1.0, 21);
        const double eps = 0.01;
        const double h = 1e-5;
        const AccelJerk aj = direct_accel_jerk(ps, eps);
        double worst = 0.0;
        for (std::size_t i = 0; i < ps.size(); ++i)
        {
            const Vec3 x = ps.particles[i].position;
            Vec3 grad;
            for (int axis = 0; axis < 3; ++axis)
            {
                const Vec3 d{axis == 0 ? h : 0.0, axis == 1 ? h : 0.0, axis == 2 ? h : 0.0};
                const long double diff =
                    oracle::potential_at(ps, i, x + d, eps) - oracle::potential_at(ps, i, x - d, eps);
                (axis == 0 ? grad.x : axis == 1 ? grad.y : grad.z) = static_cast<double>(diff / (2.0L * h));
            }
            worst = std::max(worst, norm(aj.acc[i] + grad) / norm(aj.acc[i]));
        }
        v.detail << " gradient=" << worst;
        v.require(worst <= kGradientTolerance, "acceleration equals -grad(potential) within 1e-6");
    }
    report(6, v);
}

void criterion7()
{
    Verdict v;
    fixture::Grid grid;
    const ProxyToken token = grid.store.issue_proxy(grid.credential, fixture::kPassword, 7200.0, 0.0);
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::uint64_t> size(0, 2'000'000);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k)
    {
        const std::uint64_t bytes = size(rng);
        const double expected = 0.1 + static_cast<double>(bytes) / 550'000.0;
        const double before = grid.fabric->clock().now();
        const double got = grid.fabric->transfer(bytes, k % 2 ? "darkstar" : "zonker", k % 2 ? "zonker" : "darkstar",
                                                 token);
        worst = std::max({worst, std::abs(got - expected) / expected,
                          std::abs(grid.fabric->clock().now() - before - expected) / expected});
    }
    v.detail << " transfers=100 worst_rel=" << worst;
    v.require(worst <= kTransferTolerance, "duration = latency + size/bandwidth within 1e-6");
    report(7, v);
}

void criterion8()
{
    Verdict v;
    const ExperimentConfig cfg = default_experiment(ExperimentMode::Single);
    const ExperimentResults a = run_experiment(cfg);
    const ExperimentResults b = run_experiment(cfg);
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() / ("living-acceptance-" + std::to_string(::getpid()));
    // Same file names in two directories: the json report names its event logs.
    std::filesystem::create_directories(dir / "a");
    std::filesystem::create_directories(dir / "b");
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    };
    std::size_t bytes = 0;
    for (const ReportFormat f :
         {ReportFormat::AlignedText, ReportFormat::DelimitedValues, ReportFormat::StructuredRecords})
    {
        const std::string name = std::string("report.") + to_string(f);
        const auto fa = emit_report(a, f, dir / "a" / name);
        const auto fb = emit_report(b, f, dir / "b" / name);
        v.require(fa.size() == fb.size(), "same number of files");
        for (std::size_t i = 0; i < fa.size() && i < fb.size(); ++i)
        {
            const std::string sa = slurp(fa[i]);
            bytes += sa.size();
            v.require(!sa.empty() && sa == slurp(fb[i]), "byte-identical " + fa[i].filename().string());
        }
    }
    std::filesystem::remove_all(dir);
    v.detail << " compared_bytes=" << bytes;
    report(8, v);
}

} // namespace

// With no arguments every criterion runs; otherwise only the listed numbers.
int main(int argc, char** argv)
{
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i)
    {
        wanted.insert(std::atoi(argv[i]));
    }
    const auto want = [&](int c) { return wanted.empty() || wanted.count(c) != 0; };
    try
    {
        std::vector<SweepRow> rows;
        if (want(1) || want(2) || want(4))
        {
            rows = run_sweep();
        }
        if (want(1))
        {
            criterion1(rows);
        }
        if (want(2))
        {
            criterion2(rows);
        }
        if (want(3))
        {
            criterion3();
        }
        if (want(4))
        {
            criterion4(rows);
        }
        if (want(5))
        {
            criterion5();
        }
        if (want(6))
        {
            criterion6();
        }
        if (want(7))
        {
            criterion7();
        }
        if (want(8))
        {
            criterion8();
        }
    }
    catch (const std::exception& e)
    {
        std::printf("acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::printf("acceptance: %d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

#include "living/experiment.hpp"

#include "living/credstore.hpp"
#include "living/error.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace living
{

const char* to_string(ExperimentMode m) noexcept
{
    switch (m)
    {
    case ExperimentMode::Single: return "single";
    case ExperimentMode::RaSweep: return "ra-sweep";
    case ExperimentMode::NSweep: return "n-sweep";
    }
    return "unknown";
}

const char* to_string(ReportFormat f) noexcept
{
    switch (f)
    {
    case ReportFormat::AlignedText: return "text";
    case ReportFormat::DelimitedValues: return "csv";
    case ReportFormat::StructuredRecords: return "json";
    }
    return "unknown";
}

ExperimentMode parse_mode(std::string_view s)
{
    for (const auto m : {ExperimentMode::Single, ExperimentMode::RaSweep, ExperimentMode::NSweep})
    {
        if (s == to_string(m))
        {
            return m;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown mode '" + std::string(s) + "'");
}

ReportFormat parse_format(std::string_view s)
{
    for (const auto f : {ReportFormat::AlignedText, ReportFormat::DelimitedValues, ReportFormat::StructuredRecords})
    {
        if (s == to_string(f))
        {
            return f;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown format '" + std::string(s) + "'");
}

TimingMode parse_timing(std::string_view s)
{
    if (s == "modeled")
    {
        return TimingMode::Modeled;
    }
    if (s == "measured")
    {
        return TimingMode::Measured;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown timing mode '" + std::string(s) + "'");
}

namespace
{

double parse_number(std::string_view s)
{
    const std::string str(s);
    std::size_t used = 0;
    double v = 0.0;
    try
    {
        v = std::stod(str, &used);
    }
    catch (const std::exception&)
    {
        used = 0;
    }
    if (used == 0 || used != str.size() || !std::isfinite(v) || v < 0.0)
    {
        throw Error(ErrorCode::InvalidArgument, "r_a: expected a number >= 0, 'inf' or 'sqrt(x)', got '" + str + "'");
    }
    return v;
}

std::string fmt(const char* pattern, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

} // namespace

RaValue parse_ra(std::string_view text)
{
    if (text == "inf" || text == "infinity")
    {
        return {std::numeric_limits<double>::infinity(), "inf"};
    }
    if (text.size() > 6 && text.substr(0, 5) == "sqrt(" && text.back() == ')')
    {
        const std::string_view inner = text.substr(5, text.size() - 6);
        return {std::sqrt(parse_number(inner)), std::string(text)};
    }
    return {parse_number(text), std::string(text)};
}

ExperimentConfig default_experiment(ExperimentMode mode)
{
    ExperimentConfig cfg;
    cfg.mode = mode;
    switch (mode)
    {
    case ExperimentMode::Single:
        cfg.ra_values = {parse_ra("sqrt(0.3)")};
        cfg.n_values = {2048};
        break;
    case ExperimentMode::RaSweep:
        for (const char* s : {"0", "0.1", "sqrt(0.1)", "sqrt(0.3)", "1", "sqrt(10)", "inf"})
        {
            cfg.ra_values.push_back(parse_ra(s));
        }
        cfg.n_values = {2048};
        break;
    case ExperimentMode::NSweep:
        cfg.ra_values = {parse_ra("sqrt(0.3)")};
        cfg.n_values = {256, 1024, 4096};
        break;
    }
    return cfg;
}

void validate(const ExperimentConfig& cfg)
{
    if (cfg.ra_values.empty() || cfg.n_values.empty())
    {
        throw Error(ErrorCode::InvalidArgument, "experiment: r_a and N lists must be nonempty");
    }
    for (const std::size_t n : cfg.n_values)
    {
        if (n < 4 || n % 2 != 0)
        {
            throw Error(ErrorCode::InvalidArgument, "experiment: N must be even and at least 4, got " + std::to_string(n));
        }
    }
    for (const RaValue& r : cfg.ra_values)
    {
        if (!(r.value >= 0.0))
        {
            throw Error(ErrorCode::InvalidArgument, "experiment: r_a must be >= 0");
        }
    }
    if (!(cfg.t_end > 0.0) || !(cfg.dt > 0.0) || !(cfg.theta >= 0.0) || !(cfg.eta > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "experiment: t_end, dt and eta must be positive and theta >= 0");
    }
}

RowResult run_row(const ExperimentConfig& cfg, const RaValue& r_a, std::size_t n)
{
    RowResult row;
    row.r_a = r_a;
    row.n = n;
    try
    {
        MergerConfig merger = cfg.merger;
        merger.n_per_galaxy = n / 2;
        merger.seed = cfg.seed;
        const ParticleSet initial = make_merger_ics(merger);

        const FabricConfig fabric_cfg = cfg.fabric_path ? load_fabric_config(*cfg.fabric_path) : default_fabric_config();
        CredentialStore store("myproxy");
        const std::string password = "living-" + std::to_string(cfg.seed);
        // A week of simulated time; each run spends well under a day.
        const std::string credential = store.store_credential(password, 7.0 * 24.0 * 3600.0, 0.0);
        Fabric fabric(fabric_cfg, store);

        LivingConfig living;
        living.policy.r_a = r_a.value;
        living.policy.check_interval = std::max(cfg.dt, living.policy.check_interval);
        living.tree.theta = cfg.theta;
        living.tree.dt = cfg.dt;
        living.tree.softening = merger.softening;
        living.direct.eta = cfg.eta;
        living.direct.softening = merger.softening;
        living.t_end = cfg.t_end;
        living.timing = cfg.timing;
        living.credential_id = credential;
        living.password = password;

        RunOutcome outcome = run_living_simulation(initial, living, fabric, store);
        row.report = outcome.report;
        row.events = std::move(outcome.events);
        row.migrations = outcome.migrations.size();
        for (const MigrationRecord& m : outcome.migrations)
        {
            row.migrations_identical = row.migrations_identical && m.identical && m.crc_source == m.crc_target;
        }
        if (row.report.final_phase != Phase::Terminated)
        {
            row.failed = true;
            row.failure = std::string(to_string(row.report.failure)) + ": " + row.report.failure_message;
        }
    }
    catch (const Error& e)
    {
        row.failed = true;
        row.failure = std::string(to_string(e.code())) + ": " + e.what();
    }
    return row;
}

ExperimentResults run_ra_sweep(const ExperimentConfig& cfg)
{
    validate(cfg);
    ExperimentResults out{cfg, {}};
    for (const RaValue& r : cfg.ra_values)
    {
        out.rows.push_back(run_row(cfg, r, cfg.n_values.front()));
    }
    return out;
}

ExperimentResults run_n_sweep(const ExperimentConfig& cfg)
{
    validate(cfg);
    ExperimentResults out{cfg, {}};
    for (const std::size_t n : cfg.n_values)
    {
        out.rows.push_back(run_row(cfg, cfg.ra_values.front(), n));
    }
    return out;
}

ExperimentResults run_experiment(const ExperimentConfig& cfg)
{
    switch (cfg.mode)
    {
    case ExperimentMode::RaSweep: return run_ra_sweep(cfg);
    case ExperimentMode::NSweep: return run_n_sweep(cfg);
    case ExperimentMode::Single: break;
    }
    validate(cfg);
    return {cfg, {run_row(cfg, cfg.ra_values.front(), cfg.n_values.front())}};
}

namespace
{

using Table = std::vector<std::vector<std::string>>;

double share(const RunReport& r, double seconds)
{
    return r.total > 0.0 ? seconds / r.total : 0.0;
}

// Seven columns for the r_a sweep; category breakdown and shares otherwise.
Table build_table(const ExperimentResults& results, bool text)
{
    const char* num = text ? "%.3f" : "%.9g";
    const char* err = text ? "%.3e" : "%.9g";
    Table t;
    if (results.config.mode == ExperimentMode::RaSweep)
    {
        t.push_back({"r_a", "switches", "direct_s", "tree_s", "other_s", "total_s", "dE/E"});
        for (const RowResult& row : results.rows)
        {
            const RunReport& r = row.report;
            t.push_back({row.r_a.label, std::to_string(r.switch_count), fmt(num, r.times[Category::Direct]),
                         fmt(num, r.times[Category::Tree]), fmt(num, r.times.overhead()), fmt(num, r.total),
                         row.failed ? "failed" : fmt(err, r.dE_over_E)});
        }
        return t;
    }
    std::vector<std::string> header{"N", "r_a", "switches", "migrations"};
    for (const Category c : kCategories)
    {
        header.push_back(std::string(to_string(c)) + "_s");
    }
    header.push_back("total_s");
    for (const Category c : kCategories)
    {
        header.push_back(std::string(to_string(c)) + "_share");
    }
    header.push_back("overhead_share");
    header.push_back("dE/E");
    t.push_back(header);
    const char* frac = text ? "%.4f" : "%.9g";
    for (const RowResult& row : results.rows)
    {
        const RunReport& r = row.report;
        std::vector<std::string> line{std::to_string(row.n), row.r_a.label, std::to_string(r.switch_count),
                                      std::to_string(row.migrations)};
        for (const Category c : kCategories)
        {
            line.push_back(fmt(num, r.times[c]));
        }
        line.push_back(fmt(num, r.total));
        for (const Category c : kCategories)
        {
            line.push_back(fmt(frac, share(r, r.times[c])));
        }
        line.push_back(fmt(frac, share(r, r.times.overhead())));
        line.push_back(row.failed ? "failed" : fmt(err, r.dE_over_E));
        t.push_back(line);
    }
    return t;
}

std::string render_text(const ExperimentResults& results)
{
    const Table t = build_table(results, true);
    std::vector<std::size_t> width(t.front().size(), 0);
    for (const auto& line : t)
    {
        for (std::size_t i = 0; i < line.size(); ++i)
        {
            width[i] = std::max(width[i], line[i].size());
        }
    }
    std::ostringstream os;
    os << "# mode=" << to_string(results.config.mode) << " seed=" << results.config.seed
       << " timing=" << to_string(results.config.timing) << " t_end=" << results.config.t_end << "\n";
    for (const auto& line : t)
    {
        for (std::size_t i = 0; i < line.size(); ++i)
        {
            os << (i == 0 ? "" : "  ");
            if (i == 0)
            {
                os << line[i] << std::string(width[i] - line[i].size(), ' ');
            }
            else
            {
                os << std::string(width[i] - line[i].size(), ' ') << line[i];
            }
        }
        os << "\n";
    }
    for (std::size_t i = 0; i < results.rows.size(); ++i)
    {
        if (results.rows[i].failed)
        {
            os << "# row " << i + 1 << " failed: " << results.rows[i].failure << "\n";
        }
    }
    return os.str();
}

std::string render_csv(const ExperimentResults& results)
{
    std::ostringstream os;
    for (const auto& line : build_table(results, false))
    {
        for (std::size_t i = 0; i < line.size(); ++i)
        {
            os << (i == 0 ? "" : ",") << line[i];
        }
        os << "\n";
    }
    return os.str();
}

nlohmann::ordered_json ra_json(const RaValue& r)
{
    return std::isinf(r.value) ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(r.value);
}

std::string render_json(const ExperimentResults& results, const std::vector<std::string>& event_logs)
{
    const ExperimentConfig& c = results.config;
    nlohmann::ordered_json j;
    j["mode"] = to_string(c.mode);
    j["timing"] = to_string(c.timing);
    j["reproducible"] = c.timing == TimingMode::Modeled;
    j["config"] = {{"seed", c.seed}, {"t_end", c.t_end}, {"dt", c.dt}, {"theta", c.theta}, {"eta", c.eta},
                   {"fabric", c.fabric_path ? nlohmann::ordered_json(c.fabric_path->string()) : nlohmann::ordered_json()}};
    auto& rows = j["rows"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < results.rows.size(); ++i)
    {
        const RowResult& row = results.rows[i];
        const RunReport& r = row.report;
        nlohmann::ordered_json o;
        o["n"] = row.n;
        o["r_a"] = ra_json(row.r_a);
        o["r_a_label"] = row.r_a.label;
        o["status"] = row.failed ? "failed" : "ok";
        if (row.failed)
        {
            o["failure"] = row.failure;
        }
        o["switch_count"] = r.switch_count;
        o["migrations"] = row.migrations;
        o["migrations_identical"] = row.migrations_identical;
        nlohmann::ordered_json seconds;
        nlohmann::ordered_json shares;
        for (const Category cat : kCategories)
        {
            seconds[to_string(cat)] = r.times[cat];
            shares[to_string(cat)] = share(r, r.times[cat]);
        }
        o["seconds"] = seconds;
        o["shares"] = shares;
        o["other_s"] = r.times.overhead();
        o["overhead_share"] = share(r, r.times.overhead());
        o["total_s"] = r.total;
        o["dE_over_E"] = r.dE_over_E;
        o["energy_initial"] = r.energy_initial;
        o["energy_final"] = r.energy_final;
        o["time_reached"] = r.time_reached;
        o["final_phase"] = to_string(r.final_phase);
        o["event_log"] = i < event_logs.size() ? nlohmann::ordered_json(event_logs[i]) : nlohmann::ordered_json();
        o["event_count"] = row.events.size();
        rows.push_back(o);
    }
    return j.dump(2) + "\n";
}

} // namespace

std::string render_report(const ExperimentResults& results, ReportFormat format,
                          const std::vector<std::string>& event_logs)
{
    if (results.rows.empty())
    {
        throw Error(ErrorCode::InvalidArgument, "report: no results to emit");
    }
    switch (format)
    {
    case ReportFormat::AlignedText: return render_text(results);
    case ReportFormat::DelimitedValues: return render_csv(results);
    case ReportFormat::StructuredRecords: return render_json(results, event_logs);
    }
    throw Error(ErrorCode::InvalidArgument, "report: unknown format");
}

namespace
{

void write_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    out.close();
    if (!out)
    {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
}

} // namespace

std::vector<std::filesystem::path> emit_report(const ExperimentResults& results, ReportFormat format,
                                               const std::filesystem::path& path)
{
    if (results.rows.empty())
    {
        throw Error(ErrorCode::InvalidArgument, "report: no results to emit");
    }
    std::vector<std::filesystem::path> written;
    std::vector<std::string> logs;
    if (format == ReportFormat::StructuredRecords)
    {
        for (std::size_t i = 0; i < results.rows.size(); ++i)
        {
            const std::string name = path.stem().string() + ".row" + std::to_string(i + 1) + ".events.jsonl";
            std::string lines;
            for (const Event& e : results.rows[i].events)
            {
                lines += e.to_line();
                lines += '\n';
            }
            const std::filesystem::path log_path = path.parent_path() / name;
            write_file(log_path, lines);
            written.push_back(log_path);
            logs.push_back(name);
        }
    }
    write_file(path, render_report(results, format, logs));
    written.insert(written.begin(), path);
    return written;
}

} // namespace living

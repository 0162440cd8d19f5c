#pragma once

#include "living/fabric.hpp"
#include "living/nbody.hpp"
#include "living/runtime.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace living
{

enum class ExperimentMode
{
    Single,
    RaSweep,
    NSweep,
};

enum class ReportFormat
{
    AlignedText,
    DelimitedValues,
    StructuredRecords,
};

const char* to_string(ExperimentMode m) noexcept;
const char* to_string(ReportFormat f) noexcept;
ExperimentMode parse_mode(std::string_view s);
ReportFormat parse_format(std::string_view s);
TimingMode parse_timing(std::string_view s);

/// A switching threshold together with the spelling used in reports.
struct RaValue
{
    double value = 0.0;
    std::string label;
};

/// Accepts a plain number, "inf", or "sqrt(x)".
RaValue parse_ra(std::string_view text);

struct ExperimentConfig
{
    ExperimentMode mode = ExperimentMode::Single;
    std::vector<RaValue> ra_values;
    // Total star count per run; each galaxy receives half.
    std::vector<std::size_t> n_values;
    std::uint64_t seed = 42;
    std::optional<std::filesystem::path> fabric_path;
    std::optional<std::filesystem::path> output;
    ReportFormat format = ReportFormat::AlignedText;
    TimingMode timing = TimingMode::Modeled;
    double t_end = 20.0;
    double dt = 1.0 / 64.0;
    double theta = 0.7;
    double eta = 0.02;
    MergerConfig merger;
};

/// Defaults for each mode: the seven-threshold sweep at N=2048, the N sweep
/// {256, 1024, 4096} at sqrt(0.3), or one run at N=2048 and sqrt(0.3).
ExperimentConfig default_experiment(ExperimentMode mode);

/// Nonempty lists, even N, positive numerical parameters.
void validate(const ExperimentConfig& cfg);

struct RowResult
{
    RaValue r_a;
    std::size_t n = 0;
    bool failed = false;
    std::string failure;
    RunReport report;
    std::size_t migrations = 0;
    bool migrations_identical = true;
    std::vector<Event> events;
};

struct ExperimentResults
{
    ExperimentConfig config;
    std::vector<RowResult> rows;
};

/// One living run on a fresh fabric and credential store.
RowResult run_row(const ExperimentConfig& cfg, const RaValue& r_a, std::size_t n);

/// One row per r_a at the first N; failed rows are kept and marked.
ExperimentResults run_ra_sweep(const ExperimentConfig& cfg);
/// One row per N at the first r_a.
ExperimentResults run_n_sweep(const ExperimentConfig& cfg);
ExperimentResults run_experiment(const ExperimentConfig& cfg);

/// Renders a report. `event_logs` names each row's event log file for the
/// structured format; it may be empty.
std::string render_report(const ExperimentResults& results, ReportFormat format,
                          const std::vector<std::string>& event_logs = {});

/// Writes the report to `path` and, for the structured format, one event log
/// per row next to it. Returns every file written.
std::vector<std::filesystem::path> emit_report(const ExperimentResults& results, ReportFormat format,
                                               const std::filesystem::path& path);

} // namespace living

#pragma once

namespace living
{

/// Returned by integrator observers after every step or block.
enum class StepControl
{
    Continue,
    Stop,
};

enum class SolverKind
{
    Tree,
    Direct,
};

inline const char* to_string(SolverKind kind) noexcept { return kind == SolverKind::Tree ? "tree" : "direct"; }

} // namespace living

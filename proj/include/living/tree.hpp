#pragma once

#include "living/nbody.hpp"
#include "living/solver.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

// Barnes-Hut octree with monopole cells and a fixed-step kick-drift-kick
// leapfrog on top of it.

namespace living
{

struct TreeParams
{
    double theta = 0.7;
    double softening = 0.01;
    double dt = 1.0 / 64.0;
};

void validate(const TreeParams& params);

class Octree
{
public:
    static constexpr std::int32_t kNone = -1;
    static constexpr int kMaxDepth = 48;

    struct Node
    {
        Vec3 center;
        double half_width = 0.0;
        double mass = 0.0;
        Vec3 com;
        std::array<std::int32_t, 8> children{kNone, kNone, kNone, kNone, kNone, kNone, kNone, kNone};
        // Range into particle_order() covered by this cell.
        std::uint32_t first = 0;
        std::uint32_t count = 0;
        bool leaf = true;
    };

    [[nodiscard]] const std::vector<Node>& nodes() const noexcept { return nodes_; }
    [[nodiscard]] const Node& root() const noexcept { return nodes_.front(); }
    [[nodiscard]] std::span<const std::uint32_t> particle_order() const noexcept { return order_; }

private:
    friend Octree build_tree(const ParticleSet& ps);

    std::vector<Node> nodes_;
    std::vector<std::uint32_t> order_;
};

/// Leaves hold one particle, except at kMaxDepth where coincident particles
/// share a leaf.
Octree build_tree(const ParticleSet& ps);

struct TreeStats
{
    // Particle-particle plus particle-cell evaluations.
    std::uint64_t interactions = 0;
};

/// Cells are accepted when 2*half_width / |x - com| < theta and the target
/// particle lies outside the cell.
std::vector<Vec3> tree_accel(const Octree& tree, const ParticleSet& ps, const TreeParams& params,
                             TreeStats* stats = nullptr);

using AccelFn = std::function<std::vector<Vec3>(const ParticleSet&)>;

/// One kick-drift-kick step. `acc` holds the accelerations at the start of
/// the step on entry and at the end on exit. Negative dt steps backwards.
void leapfrog_step(ParticleSet& ps, std::vector<Vec3>& acc, double dt, const AccelFn& accel);

class LeapfrogIntegrator
{
public:
    LeapfrogIntegrator(ParticleSet initial, TreeParams params);

    void step();

    [[nodiscard]] const ParticleSet& state() const noexcept { return state_; }
    [[nodiscard]] ParticleSet& state() noexcept { return state_; }
    [[nodiscard]] double time() const noexcept { return state_.time; }
    [[nodiscard]] const TreeParams& params() const noexcept { return params_; }
    [[nodiscard]] std::uint64_t interactions() const noexcept { return stats_.interactions; }
    [[nodiscard]] std::uint64_t steps() const noexcept { return steps_; }

private:
    std::vector<Vec3> compute(const ParticleSet& ps);

    ParticleSet state_;
    TreeParams params_;
    std::vector<Vec3> acc_;
    TreeStats stats_;
    std::uint64_t steps_ = 0;
    double start_time_ = 0.0;
};

using TreeObserver = std::function<StepControl(const LeapfrogIntegrator&)>;

/// Advances ps to t_end with fixed steps of params.dt. The observer runs
/// after every step and may stop the run early.
ParticleSet tree_evolve(const ParticleSet& ps, const TreeParams& params, double t_end,
                        const TreeObserver& observer = {});

/// Number of fixed steps between t_start and t_end; throws if not integral.
std::uint64_t fixed_step_count(double t_start, double t_end, double dt);

} // namespace living

#include "living/tree.hpp"

#include "living/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace living
{

void validate(const TreeParams& params)
{
    if (!(params.theta > 0.0 && params.theta <= 1.0))
    {
        throw Error(ErrorCode::InvalidArgument, "tree: theta must lie in (0, 1]");
    }
    if (!(params.dt > 0.0) || !(params.softening >= 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "tree: dt must be > 0 and softening >= 0");
    }
}

namespace
{

int octant(const Vec3& p, const Vec3& c) noexcept
{
    return (p.x >= c.x ? 1 : 0) | (p.y >= c.y ? 2 : 0) | (p.z >= c.z ? 4 : 0);
}

class Builder
{
public:
    Builder(const ParticleSet& ps, std::vector<Octree::Node>& nodes, std::vector<std::uint32_t>& order)
        : particles_(ps.particles)
        , nodes_(nodes)
        , order_(order)
        , scratch_(order.size())
    {
    }

    std::int32_t build(Vec3 center, double half, std::uint32_t first, std::uint32_t count, int depth)
    {
        const auto index = static_cast<std::int32_t>(nodes_.size());
        nodes_.emplace_back();
        {
            Octree::Node& node = nodes_.back();
            node.center = center;
            node.half_width = half;
            node.first = first;
            node.count = count;
        }

        if (count == 1 || depth >= Octree::kMaxDepth)
        {
            double mass = 0.0;
            Vec3 moment;
            for (std::uint32_t k = first; k < first + count; ++k)
            {
                const Particle& p = particles_[order_[k]];
                mass += p.mass;
                moment += p.mass * p.position;
            }
            Octree::Node& node = nodes_[static_cast<std::size_t>(index)];
            node.mass = mass;
            node.com = moment / mass;
            return index;
        }

        // Counting sort of the range by octant.
        std::array<std::uint32_t, 9> offsets{};
        for (std::uint32_t k = first; k < first + count; ++k)
        {
            ++offsets[static_cast<std::size_t>(octant(particles_[order_[k]].position, center)) + 1];
        }
        for (std::size_t o = 1; o < offsets.size(); ++o)
        {
            offsets[o] += offsets[o - 1];
        }
        std::array<std::uint32_t, 8> cursor{};
        std::copy_n(offsets.begin(), 8, cursor.begin());
        for (std::uint32_t k = first; k < first + count; ++k)
        {
            const auto o = static_cast<std::size_t>(octant(particles_[order_[k]].position, center));
            scratch_[first + cursor[o]++] = order_[k];
        }
        std::copy_n(scratch_.begin() + first, count, order_.begin() + first);

        const double child_half = 0.5 * half;
        std::array<std::int32_t, 8> children{};
        children.fill(Octree::kNone);
        for (int o = 0; o < 8; ++o)
        {
            const std::uint32_t n = offsets[static_cast<std::size_t>(o) + 1] - offsets[static_cast<std::size_t>(o)];
            if (n == 0)
            {
                continue;
            }
            const Vec3 child_center{center.x + ((o & 1) ? child_half : -child_half),
                                    center.y + ((o & 2) ? child_half : -child_half),
                                    center.z + ((o & 4) ? child_half : -child_half)};
            children[static_cast<std::size_t>(o)] =
                build(child_center, child_half, first + offsets[static_cast<std::size_t>(o)], n, depth + 1);
        }

        double mass = 0.0;
        Vec3 moment;
        for (const std::int32_t c : children)
        {
            if (c != Octree::kNone)
            {
                const Octree::Node& child = nodes_[static_cast<std::size_t>(c)];
                mass += child.mass;
                moment += child.mass * child.com;
            }
        }
        Octree::Node& node = nodes_[static_cast<std::size_t>(index)];
        node.children = children;
        node.leaf = false;
        node.mass = mass;
        node.com = moment / mass;
        return index;
    }

private:
    const std::vector<Particle>& particles_;
    std::vector<Octree::Node>& nodes_;
    std::vector<std::uint32_t>& order_;
    std::vector<std::uint32_t> scratch_;
};

bool inside(const Octree::Node& node, const Vec3& p) noexcept
{
    const Vec3 d = p - node.center;
    const double h = node.half_width;
    return std::abs(d.x) <= h && std::abs(d.y) <= h && std::abs(d.z) <= h;
}

} // namespace

Octree build_tree(const ParticleSet& ps)
{
    if (ps.empty())
    {
        throw Error(ErrorCode::InvalidArgument, "build_tree: empty particle set");
    }
    Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
            std::numeric_limits<double>::max()};
    Vec3 hi = -lo;
    for (const Particle& p : ps.particles)
    {
        if (!is_finite(p.position))
        {
            throw Error(ErrorCode::InvalidArgument, "build_tree: non-finite position for particle " + std::to_string(p.id));
        }
        lo = {std::min(lo.x, p.position.x), std::min(lo.y, p.position.y), std::min(lo.z, p.position.z)};
        hi = {std::max(hi.x, p.position.x), std::max(hi.y, p.position.y), std::max(hi.z, p.position.z)};
    }
    const Vec3 center = 0.5 * (lo + hi);
    double half = 0.5 * std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    // Pad so rounding in the centre cannot push an extreme particle outside.
    half = half > 0.0 ? half * (1.0 + 1e-12) + std::numeric_limits<double>::min() : 1.0;

    Octree tree;
    tree.order_.resize(ps.size());
    for (std::uint32_t i = 0; i < tree.order_.size(); ++i)
    {
        tree.order_[i] = i;
    }
    tree.nodes_.reserve(2 * ps.size());
    Builder(ps, tree.nodes_, tree.order_).build(center, half, 0, static_cast<std::uint32_t>(ps.size()), 0);
    return tree;
}

std::vector<Vec3> tree_accel(const Octree& tree, const ParticleSet& ps, const TreeParams& params, TreeStats* stats)
{
    const auto& nodes = tree.nodes();
    const auto order = tree.particle_order();
    const auto& particles = ps.particles;
    const double eps2 = params.softening * params.softening;
    const double theta2 = params.theta * params.theta;

    std::vector<Vec3> acc(particles.size());
    std::uint64_t interactions = 0;
    std::vector<std::int32_t> stack;
    stack.reserve(8 * Octree::kMaxDepth + 8);

    for (std::size_t i = 0; i < particles.size(); ++i)
    {
        const Vec3 xi = particles[i].position;
        Vec3 a;
        stack.clear();
        stack.push_back(0);
        while (!stack.empty())
        {
            const Octree::Node& node = nodes[static_cast<std::size_t>(stack.back())];
            stack.pop_back();

            if (node.leaf)
            {
                for (std::uint32_t k = node.first; k < node.first + node.count; ++k)
                {
                    const std::uint32_t j = order[k];
                    if (j == i)
                    {
                        continue;
                    }
                    const Vec3 d = particles[j].position - xi;
                    const double r2 = norm2(d) + eps2;
                    const double rinv = 1.0 / std::sqrt(r2);
                    a += (particles[j].mass * rinv * rinv * rinv) * d;
                    ++interactions;
                }
                continue;
            }

            const Vec3 d = node.com - xi;
            const double dist2 = norm2(d);
            const double size = 2.0 * node.half_width;
            if (size * size < theta2 * dist2 && !inside(node, xi))
            {
                const double rinv = 1.0 / std::sqrt(dist2 + eps2);
                a += (node.mass * rinv * rinv * rinv) * d;
                ++interactions;
                continue;
            }
            for (auto c = node.children.rbegin(); c != node.children.rend(); ++c)
            {
                if (*c != Octree::kNone)
                {
                    stack.push_back(*c);
                }
            }
        }
        acc[i] = a;
    }
    if (stats != nullptr)
    {
        stats->interactions += interactions;
    }
    return acc;
}

void leapfrog_step(ParticleSet& ps, std::vector<Vec3>& acc, double dt, const AccelFn& accel)
{
    const double half = 0.5 * dt;
    for (std::size_t i = 0; i < ps.size(); ++i)
    {
        Particle& p = ps.particles[i];
        p.velocity += half * acc[i];
        p.position += dt * p.velocity;
    }
    ps.time += dt;
    acc = accel(ps);
    for (std::size_t i = 0; i < ps.size(); ++i)
    {
        ps.particles[i].velocity += half * acc[i];
    }
}

LeapfrogIntegrator::LeapfrogIntegrator(ParticleSet initial, TreeParams params)
    : state_(std::move(initial))
    , params_(params)
    , start_time_(state_.time)
{
    validate(params_);
    acc_ = compute(state_);
}

std::vector<Vec3> LeapfrogIntegrator::compute(const ParticleSet& ps)
{
    return tree_accel(build_tree(ps), ps, params_, &stats_);
}

void LeapfrogIntegrator::step()
{
    leapfrog_step(state_, acc_, params_.dt, [this](const ParticleSet& ps) { return compute(ps); });
    ++steps_;
    // Re-derive time from the step counter so it cannot drift.
    state_.time = start_time_ + static_cast<double>(steps_) * params_.dt;
    for (const Particle& p : state_.particles)
    {
        if (!is_finite(p.position) || !is_finite(p.velocity))
        {
            throw Error(ErrorCode::Diverged, "tree: non-finite state at t=" + std::to_string(state_.time));
        }
    }
}

std::uint64_t fixed_step_count(double t_start, double t_end, double dt)
{
    if (t_end < t_start)
    {
        throw Error(ErrorCode::InvalidArgument, "tree_evolve: t_end precedes the current time");
    }
    const double steps = (t_end - t_start) / dt;
    const double rounded = std::round(steps);
    if (std::abs(steps - rounded) > 1e-9)
    {
        throw Error(ErrorCode::InvalidArgument, "tree_evolve: (t_end - t) / dt is not an integer");
    }
    return static_cast<std::uint64_t>(rounded);
}

ParticleSet tree_evolve(const ParticleSet& ps, const TreeParams& params, double t_end, const TreeObserver& observer)
{
    validate(params);
    const std::uint64_t steps = fixed_step_count(ps.time, t_end, params.dt);
    if (steps == 0)
    {
        return ps;
    }
    LeapfrogIntegrator integrator(ps, params);
    for (std::uint64_t k = 0; k < steps; ++k)
    {
        integrator.step();
        if (observer && observer(integrator) == StepControl::Stop)
        {
            break;
        }
    }
    ParticleSet out = integrator.state();
    if (integrator.steps() == steps)
    {
        out.time = t_end;
    }
    return out;
}

} // namespace living

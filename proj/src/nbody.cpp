#include "living/nbody.hpp"

#include "living/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

namespace living
{

std::size_t ParticleSet::n_smbh() const noexcept
{
    return static_cast<std::size_t>(
        std::count_if(particles.begin(), particles.end(), [](const Particle& p) { return p.is_smbh; }));
}

namespace
{

// Uniform in (0, 1), built from the top 53 bits so the stream is identical
// across standard library implementations.
class Uniform
{
public:
    explicit Uniform(std::uint64_t seed)
        : engine_(seed)
    {
    }

    double operator()()
    {
        double u = 0.0;
        do
        {
            u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        } while (u == 0.0);
        return u;
    }

private:
    std::mt19937_64 engine_;
};

Vec3 isotropic(Uniform& uniform, double radius)
{
    const double z = (1.0 - 2.0 * uniform()) * radius;
    const double phi = 2.0 * std::numbers::pi * uniform();
    const double rho = std::sqrt(std::max(0.0, radius * radius - z * z));
    return {rho * std::cos(phi), rho * std::sin(phi), z};
}

std::uint64_t splitmix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

ParticleSet make_plummer(std::size_t n, double total_mass, std::uint64_t seed)
{
    if (n < 2)
    {
        throw Error(ErrorCode::InvalidArgument, "make_plummer: need at least 2 particles, got " + std::to_string(n));
    }
    if (!(total_mass > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "make_plummer: total mass must be positive");
    }

    // Aarseth, Henon & Wielen sampling in units of the Plummer scale length,
    // rescaled to virial units afterwards. The cumulative mass is truncated
    // at 99.9% to avoid unbounded radii.
    constexpr double mass_cut = 0.999;
    const double length_scale = 3.0 * std::numbers::pi / 16.0;
    const double velocity_scale = std::sqrt(total_mass / length_scale);

    Uniform uniform(seed);
    ParticleSet ps;
    ps.particles.resize(n);
    const double m = total_mass / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i)
    {
        const double x1 = uniform() * mass_cut;
        const double r = 1.0 / std::sqrt(std::pow(x1, -2.0 / 3.0) - 1.0);

        // q^2 (1 - q^2)^(7/2) peaks below 0.1 on [0, 1].
        double q = 0.0;
        for (;;)
        {
            q = uniform();
            const double g = 0.1 * uniform();
            if (g < q * q * std::pow(1.0 - q * q, 3.5))
            {
                break;
            }
        }
        const double v = q * std::numbers::sqrt2 * std::pow(1.0 + r * r, -0.25);

        Particle& p = ps.particles[i];
        p.id = i;
        p.mass = m;
        p.position = isotropic(uniform, r) * length_scale;
        p.velocity = isotropic(uniform, v) * velocity_scale;
    }

    recenter(ps);
    return ps;
}

void validate(const MergerConfig& cfg)
{
    if (cfg.n_per_galaxy < 2)
    {
        throw Error(ErrorCode::InvalidArgument, "merger: n_per_galaxy must be >= 2");
    }
    if (!(cfg.galaxy_mass > 0.0) || !(cfg.bh_mass > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "merger: galaxy and SMBH masses must be positive");
    }
    if (!(cfg.softening > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "merger: softening must be positive");
    }
    if (!(cfg.initial_separation >= 0.0) || !is_finite(cfg.relative_velocity))
    {
        throw Error(ErrorCode::InvalidArgument, "merger: separation must be >= 0 and velocity finite");
    }
    if (cfg.initial_separation > 0.0)
    {
        const double m = cfg.galaxy_mass + cfg.bh_mass;
        const double reduced = 0.5 * m;
        const double orbital = 0.5 * reduced * norm2(cfg.relative_velocity) - m * m / cfg.initial_separation;
        if (!(orbital < 0.0))
        {
            throw Error(ErrorCode::InvalidArgument,
                        "merger: galaxies are not on a bound orbit (E_orb = " + std::to_string(orbital) + ")");
        }
    }
}

ParticleSet make_merger_ics(const MergerConfig& cfg)
{
    validate(cfg);

    const std::size_t n = cfg.n_per_galaxy;
    const ParticleSet a = make_plummer(n, cfg.galaxy_mass, splitmix(cfg.seed));
    const ParticleSet b = make_plummer(n, cfg.galaxy_mass, splitmix(cfg.seed ^ 0x5bd1e995ULL));

    const Vec3 offset{0.5 * cfg.initial_separation, 0.0, 0.0};
    const Vec3 bulk = 0.5 * cfg.relative_velocity;

    ParticleSet ps;
    ps.particles.reserve(2 * n + 2);
    for (const auto& [galaxy, sign] : {std::pair{&a, -1.0}, std::pair{&b, 1.0}})
    {
        for (Particle p : galaxy->particles)
        {
            p.position += sign * offset;
            p.velocity += sign * bulk;
            ps.particles.push_back(p);
        }
    }
    // Each galaxy's stars have their COM at the offset, so that is where its
    // SMBH goes, moving with the galaxy.
    for (const double sign : {-1.0, 1.0})
    {
        Particle bh;
        bh.mass = cfg.bh_mass;
        bh.position = sign * offset;
        bh.velocity = sign * bulk;
        bh.is_smbh = true;
        ps.particles.push_back(bh);
    }
    for (std::size_t i = 0; i < ps.particles.size(); ++i)
    {
        ps.particles[i].id = i;
    }
    recenter(ps);
    return ps;
}

EnergyReport total_energy(const ParticleSet& ps, double softening)
{
    if (softening < 0.0)
    {
        throw Error(ErrorCode::InvalidArgument, "total_energy: softening must be >= 0");
    }
    const auto& p = ps.particles;
    const double eps2 = softening * softening;

    EnergyReport e;
    for (const Particle& q : p)
    {
        e.kinetic += 0.5 * q.mass * norm2(q.velocity);
    }
    for (std::size_t i = 0; i < p.size(); ++i)
    {
        double row = 0.0;
        for (std::size_t j = i + 1; j < p.size(); ++j)
        {
            const double r2 = norm2(p[i].position - p[j].position) + eps2;
            if (r2 == 0.0)
            {
                row = std::numeric_limits<double>::infinity();
                break;
            }
            row += p[j].mass / std::sqrt(r2);
        }
        e.potential -= p[i].mass * row;
    }
    e.total = e.kinetic + e.potential;
    return e;
}

double bh_separation(const ParticleSet& ps)
{
    const Particle* first = nullptr;
    const Particle* second = nullptr;
    std::size_t count = 0;
    for (const Particle& p : ps.particles)
    {
        if (!p.is_smbh)
        {
            continue;
        }
        (count == 0 ? first : second) = &p;
        ++count;
        if (count > 2)
        {
            break;
        }
    }
    if (count != 2)
    {
        throw Error(ErrorCode::InvalidState, "bh_separation: expected exactly 2 SMBH particles");
    }
    return norm(first->position - second->position);
}

double total_mass(const ParticleSet& ps)
{
    double m = 0.0;
    for (const Particle& p : ps.particles)
    {
        m += p.mass;
    }
    return m;
}

Vec3 center_of_mass(const ParticleSet& ps)
{
    Vec3 c;
    for (const Particle& p : ps.particles)
    {
        c += p.mass * p.position;
    }
    return c / total_mass(ps);
}

Vec3 total_momentum(const ParticleSet& ps)
{
    Vec3 mv;
    for (const Particle& p : ps.particles)
    {
        mv += p.mass * p.velocity;
    }
    return mv;
}

void recenter(ParticleSet& ps)
{
    const double m = total_mass(ps);
    const Vec3 com = center_of_mass(ps);
    const Vec3 vcom = total_momentum(ps) / m;
    for (Particle& p : ps.particles)
    {
        p.position -= com;
        p.velocity -= vcom;
    }
}

} // namespace living

#pragma once

// Shared run fixtures: a credential store, a fabric and a living config wired
// together the way the CLI wires them, plus the two-SMBH Kepler orbit.

#include "living/credstore.hpp"
#include "living/fabric.hpp"
#include "living/nbody.hpp"
#include "living/runtime.hpp"
#include "oracles.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <string>

namespace fixture
{

inline constexpr const char* kPassword = "correct horse battery staple";

struct Grid
{
    living::CredentialStore store{"myproxy"};
    std::string credential;
    std::unique_ptr<living::Fabric> fabric;

    explicit Grid(living::FabricConfig cfg = living::default_fabric_config(), double credential_lifetime = 7 * 86400.0)
    {
        credential = store.store_credential(kPassword, credential_lifetime, 0.0);
        fabric = std::make_unique<living::Fabric>(std::move(cfg), store);
    }
};

inline living::LivingConfig config(const Grid& grid, double r_a, double t_end, double softening = 0.01)
{
    living::LivingConfig cfg;
    cfg.policy.r_a = r_a;
    cfg.tree.softening = softening;
    cfg.direct.softening = softening;
    cfg.t_end = t_end;
    cfg.credential_id = grid.credential;
    cfg.password = kPassword;
    return cfg;
}

inline living::ParticleSet merger(std::size_t n_total, std::uint64_t seed = 42)
{
    living::MergerConfig m;
    m.n_per_galaxy = n_total / 2;
    m.seed = seed;
    return living::make_merger_ics(m);
}

/// Two equal SMBHs (total mass 1) released at apocentre of an orbit with
/// semi-major axis a and eccentricity e.
struct KeplerPair
{
    living::ParticleSet particles;
    oracle::Kepler orbit;
    double r_a = 0.0;
};

inline living::ParticleSet kepler_particles(double a, double e)
{
    const double r0 = a * (1.0 + e);
    const double v0 = std::sqrt((1.0 - e) / r0);
    living::ParticleSet ps;
    for (int s : {-1, 1})
    {
        living::Particle p;
        p.id = s < 0 ? 0 : 1;
        p.mass = 0.5;
        p.is_smbh = true;
        p.position = {0.5 * s * r0, 0.0, 0.0};
        p.velocity = {0.0, 0.5 * s * v0, 0.0};
        ps.particles.push_back(p);
    }
    return ps;
}

/// Draws random orbits until one keeps every check instant at least `margin`
/// away from the threshold, so integration error cannot flip a sample.
inline KeplerPair random_kepler(std::mt19937_64& rng, double t_end, double check_interval, double margin = 2e-3)
{
    std::uniform_real_distribution<double> ua(0.8, 1.5);
    std::uniform_real_distribution<double> ue(0.2, 0.6);
    std::uniform_real_distribution<double> uf(0.1, 0.9);
    for (;;)
    {
        const double a = ua(rng);
        const double e = ue(rng);
        const double peri = a * (1.0 - e);
        const double apo = a * (1.0 + e);
        const double r_a = peri + uf(rng) * (apo - peri);
        living::ParticleSet ps = kepler_particles(a, e);
        const living::Particle& p0 = ps.particles[0];
        const living::Particle& p1 = ps.particles[1];
        oracle::Kepler orbit(1.0, p1.position - p0.position, p1.velocity - p0.velocity);
        bool clear = true;
        const auto checks = static_cast<long>(std::lround(t_end / check_interval));
        for (long k = 0; k <= checks && clear; ++k)
        {
            clear = std::abs(orbit.separation(static_cast<double>(k) * check_interval) - r_a) >= margin;
        }
        if (clear)
        {
            return {std::move(ps), orbit, r_a};
        }
    }
}

} // namespace fixture

#pragma once

#include "living/vec3.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

// Particle containers, initial conditions and energy diagnostics.
// Units are standard N-body (Heggie) units with G = 1.

namespace living
{

struct Particle
{
    std::uint64_t id = 0;
    double mass = 0.0;
    Vec3 position;
    Vec3 velocity;
    bool is_smbh = false;

    friend bool operator==(const Particle&, const Particle&) = default;
};

struct ParticleSet
{
    std::vector<Particle> particles;
    double time = 0.0;

    [[nodiscard]] std::size_t size() const noexcept { return particles.size(); }
    [[nodiscard]] bool empty() const noexcept { return particles.empty(); }
    [[nodiscard]] std::size_t n_smbh() const noexcept;

    friend bool operator==(const ParticleSet&, const ParticleSet&) = default;
};

struct EnergyReport
{
    double kinetic = 0.0;
    double potential = 0.0;
    double total = 0.0;
};

struct MergerConfig
{
    std::size_t n_per_galaxy = 1024;
    double galaxy_mass = 1.0;
    double bh_mass = 0.01;
    double softening = 0.01;
    double initial_separation = 4.0;
    // Velocity of the second galaxy relative to the first; the first galaxy
    // starts at -x, so a negative x component means approach.
    Vec3 relative_velocity{-0.6, 0.12, 0.0};
    std::uint64_t seed = 42;
};

/// Plummer sphere in virial units (scale radius 3*pi/16, E = -M^2/4), with
/// the centre of mass and net momentum removed.
ParticleSet make_plummer(std::size_t n, double total_mass, std::uint64_t seed);

/// Two Plummer galaxies, each with a central SMBH, placed at +-separation/2
/// on the x axis and moving with -+relative_velocity/2. Particle order is
/// galaxy A stars, galaxy B stars, SMBH A, SMBH B.
ParticleSet make_merger_ics(const MergerConfig& cfg);

/// Validates the MergerConfig invariants and that the two galaxies (treated
/// as point masses) start on a bound orbit.
void validate(const MergerConfig& cfg);

/// Kinetic, Plummer-softened potential and total energy. Coincident
/// particles with zero softening produce an infinite potential.
EnergyReport total_energy(const ParticleSet& ps, double softening);

/// Distance between the two SMBH particles.
double bh_separation(const ParticleSet& ps);

Vec3 center_of_mass(const ParticleSet& ps);
Vec3 total_momentum(const ParticleSet& ps);
double total_mass(const ParticleSet& ps);

/// Shifts positions and velocities so the COM sits at rest at the origin.
void recenter(ParticleSet& ps);

} // namespace living

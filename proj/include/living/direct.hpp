#pragma once

#include "living/nbody.hpp"
#include "living/solver.hpp"

#include <cstdint>
#include <functional>
#include <vector>

// Direct-summation N-body integration: 4th-order Hermite predictor-corrector
// with individual block (power-of-two) timesteps.

namespace living
{

struct DirectParams
{
    double eta = 0.02;
    double dt_max = 0x1.0p-5;
    double dt_min = 0x1.0p-23;
    double softening = 0.01;
};

void validate(const DirectParams& params);

struct AccelJerk
{
    std::vector<Vec3> acc;
    std::vector<Vec3> jerk;
};

/// Exact O(n^2) softened accelerations and their time derivatives.
AccelJerk direct_accel_jerk(const ParticleSet& ps, double softening);

/// Largest power of two not exceeding x (x > 0).
double floor_pow2(double x);

/// Unclamped Aarseth criterion; +infinity when both numerator and
/// denominator vanish.
double aarseth_raw(const Vec3& acc, const Vec3& jerk, const Vec3& snap, const Vec3& crackle, double eta);

/// Aarseth criterion floored to a power of two and clamped to
/// [dt_min, dt_max]. Degenerate (all-zero) derivatives give dt_max.
double aarseth_timestep(const Vec3& acc, const Vec3& jerk, const Vec3& snap, const Vec3& crackle,
                        const DirectParams& params);

class HermiteIntegrator;
using DirectObserver = std::function<StepControl(const HermiteIntegrator&)>;

/// Block-timestep Hermite state. Particle i lives at time(i) with step dt(i);
/// the block grid is anchored at epoch(), the last instant every particle
/// was synchronised.
class HermiteIntegrator
{
public:
    HermiteIntegrator(const ParticleSet& initial, DirectParams params);

    /// Runs blocks until every particle sits at t_end, calling the observer
    /// after each block. Returns false if the observer stopped the run early.
    bool advance_to(double t_end, const DirectObserver& observer = {});

    /// Time of the most recently completed block.
    [[nodiscard]] double time() const noexcept { return block_time_; }
    [[nodiscard]] double epoch() const noexcept { return epoch_; }
    [[nodiscard]] bool synchronized() const noexcept;
    [[nodiscard]] std::size_t size() const noexcept { return mass_.size(); }
    [[nodiscard]] double particle_time(std::size_t i) const noexcept { return t_[i]; }
    [[nodiscard]] double particle_dt(std::size_t i) const noexcept { return dt_[i]; }
    [[nodiscard]] Vec3 position(std::size_t i) const noexcept { return {x_[i], y_[i], z_[i]}; }
    [[nodiscard]] Vec3 velocity(std::size_t i) const noexcept { return {vx_[i], vy_[i], vz_[i]}; }
    [[nodiscard]] const DirectParams& params() const noexcept { return params_; }

    /// Current state; particles carry their own individual times, so this is
    /// a consistent snapshot only when synchronized().
    [[nodiscard]] ParticleSet state() const;

    [[nodiscard]] std::uint64_t interactions() const noexcept { return interactions_; }
    [[nodiscard]] std::uint64_t blocks() const noexcept { return blocks_; }

private:
    void predict(double t);
    void force_on(std::size_t i, double& ax, double& ay, double& az, double& jx, double& jy, double& jz) const;
    void correct(std::size_t i, double t_new, double ax, double ay, double az, double jx, double jy, double jz);
    void step_block(double t_block);

    DirectParams params_;
    ParticleSet meta_; // ids, SMBH flags; positions are not kept current here

    std::vector<double> mass_;
    std::vector<double> x_, y_, z_, vx_, vy_, vz_;
    std::vector<double> ax_, ay_, az_, jx_, jy_, jz_;
    std::vector<double> sx_, sy_, sz_; // snap at the particle's time
    std::vector<double> px_, py_, pz_, pvx_, pvy_, pvz_;
    std::vector<double> t_, dt_;
    std::vector<std::uint32_t> active_;

    double epoch_ = 0.0;
    double block_time_ = 0.0;
    std::uint64_t interactions_ = 0;
    std::uint64_t blocks_ = 0;
};

/// Integrates to exactly t_end; every particle ends synchronised at t_end.
ParticleSet direct_evolve(const ParticleSet& ps, const DirectParams& params, double t_end,
                          const DirectObserver& observer = {});

} // namespace living

#include "living/direct.hpp"

#include "living/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace living
{

namespace
{

bool is_pow2(double x)
{
    int e = 0;
    return x > 0.0 && std::frexp(x, &e) == 0.5;
}

} // namespace

void validate(const DirectParams& params)
{
    if (!(params.eta > 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "direct: eta must be positive");
    }
    if (!is_pow2(params.dt_min) || !is_pow2(params.dt_max) || params.dt_min > params.dt_max)
    {
        throw Error(ErrorCode::InvalidArgument, "direct: dt_min <= dt_max must both be powers of two");
    }
    if (!(params.softening >= 0.0))
    {
        throw Error(ErrorCode::InvalidArgument, "direct: softening must be >= 0");
    }
}

double floor_pow2(double x)
{
    if (!(x > 0.0))
    {
        return 0.0;
    }
    if (std::isinf(x))
    {
        return x;
    }
    int e = 0;
    std::frexp(x, &e);
    return std::ldexp(1.0, e - 1);
}

double aarseth_raw(const Vec3& acc, const Vec3& jerk, const Vec3& snap, const Vec3& crackle, double eta)
{
    const double a = norm(acc);
    const double j = norm(jerk);
    const double s = norm(snap);
    const double c = norm(crackle);
    const double num = a * s + j * j;
    const double den = j * c + s * s;
    if (den == 0.0)
    {
        return std::numeric_limits<double>::infinity();
    }
    return std::sqrt(eta * num / den);
}

double aarseth_timestep(const Vec3& acc, const Vec3& jerk, const Vec3& snap, const Vec3& crackle,
                        const DirectParams& params)
{
    const double raw = aarseth_raw(acc, jerk, snap, crackle, params.eta);
    return std::clamp(floor_pow2(raw), params.dt_min, params.dt_max);
}

AccelJerk direct_accel_jerk(const ParticleSet& ps, double softening)
{
    const auto& p = ps.particles;
    const double eps2 = softening * softening;
    AccelJerk out;
    out.acc.resize(p.size());
    out.jerk.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
    {
        Vec3 a;
        Vec3 jk;
        for (std::size_t j = 0; j < p.size(); ++j)
        {
            if (j == i)
            {
                continue;
            }
            const Vec3 d = p[j].position - p[i].position;
            const Vec3 dv = p[j].velocity - p[i].velocity;
            const double rinv2 = 1.0 / (norm2(d) + eps2);
            const double mr3 = p[j].mass * rinv2 * std::sqrt(rinv2);
            const double alpha = 3.0 * dot(d, dv) * rinv2;
            a += mr3 * d;
            jk += mr3 * (dv - alpha * d);
        }
        out.acc[i] = a;
        out.jerk[i] = jk;
    }
    return out;
}

HermiteIntegrator::HermiteIntegrator(const ParticleSet& initial, DirectParams params)
    : params_(params)
    , meta_(initial)
    , epoch_(initial.time)
    , block_time_(initial.time)
{
    validate(params_);
    const std::size_t n = initial.size();
    for (auto* v : {&mass_, &x_, &y_, &z_, &vx_, &vy_, &vz_, &ax_, &ay_, &az_, &jx_, &jy_, &jz_, &sx_, &sy_, &sz_,
                    &px_, &py_, &pz_, &pvx_, &pvy_, &pvz_, &t_, &dt_})
    {
        v->assign(n, 0.0);
    }
    for (std::size_t i = 0; i < n; ++i)
    {
        const Particle& p = initial.particles[i];
        if (!is_finite(p.position) || !is_finite(p.velocity))
        {
            throw Error(ErrorCode::Diverged, "direct: non-finite initial state for particle " + std::to_string(p.id));
        }
        mass_[i] = p.mass;
        x_[i] = px_[i] = p.position.x;
        y_[i] = py_[i] = p.position.y;
        z_[i] = pz_[i] = p.position.z;
        vx_[i] = pvx_[i] = p.velocity.x;
        vy_[i] = pvy_[i] = p.velocity.y;
        vz_[i] = pvz_[i] = p.velocity.z;
        t_[i] = initial.time;
    }
    // Startup step from the reduced criterion eta*|a|/|j|; higher
    // derivatives are not known before the first corrector.
    for (std::size_t i = 0; i < n; ++i)
    {
        force_on(i, ax_[i], ay_[i], az_[i], jx_[i], jy_[i], jz_[i]);
        const double a = norm(Vec3{ax_[i], ay_[i], az_[i]});
        const double j = norm(Vec3{jx_[i], jy_[i], jz_[i]});
        const double raw = (a > 0.0 && j > 0.0) ? params_.eta * a / j : params_.dt_max;
        dt_[i] = std::clamp(floor_pow2(raw), params_.dt_min, params_.dt_max);
    }
    interactions_ += n * (n > 0 ? n - 1 : 0);
}

bool HermiteIntegrator::synchronized() const noexcept
{
    return std::all_of(t_.begin(), t_.end(), [this](double t) { return t == block_time_; });
}

void HermiteIntegrator::predict(double t)
{
    const std::size_t n = mass_.size();
    for (std::size_t i = 0; i < n; ++i)
    {
        const double h = t - t_[i];
        const double h2 = 0.5 * h;
        const double h3 = h / 3.0;
        px_[i] = x_[i] + h * (vx_[i] + h2 * (ax_[i] + h3 * jx_[i]));
        py_[i] = y_[i] + h * (vy_[i] + h2 * (ay_[i] + h3 * jy_[i]));
        pz_[i] = z_[i] + h * (vz_[i] + h2 * (az_[i] + h3 * jz_[i]));
        pvx_[i] = vx_[i] + h * (ax_[i] + h2 * jx_[i]);
        pvy_[i] = vy_[i] + h * (ay_[i] + h2 * jy_[i]);
        pvz_[i] = vz_[i] + h * (az_[i] + h2 * jz_[i]);
    }
}

void HermiteIntegrator::force_on(std::size_t i, double& ax, double& ay, double& az, double& jx, double& jy,
                                 double& jz) const
{
    const double* __restrict m = mass_.data();
    const double* __restrict x = px_.data();
    const double* __restrict y = py_.data();
    const double* __restrict z = pz_.data();
    const double* __restrict vx = pvx_.data();
    const double* __restrict vy = pvy_.data();
    const double* __restrict vz = pvz_.data();
    const double xi = x[i], yi = y[i], zi = z[i];
    const double vxi = vx[i], vyi = vy[i], vzi = vz[i];
    const double eps2 = params_.softening * params_.softening;

    double sax = 0.0, say = 0.0, saz = 0.0, sjx = 0.0, sjy = 0.0, sjz = 0.0;
    const std::size_t n = mass_.size();
#if defined(__AVX512F__)
    // 1/sqrt from the 14-bit hardware estimate plus two Newton steps, which
    // is accurate to a few ulp and several times faster than sqrt + divide.
    const __m512d vxi_ = _mm512_set1_pd(xi), vyi_ = _mm512_set1_pd(yi), vzi_ = _mm512_set1_pd(zi);
    const __m512d vvxi = _mm512_set1_pd(vxi), vvyi = _mm512_set1_pd(vyi), vvzi = _mm512_set1_pd(vzi);
    const __m512d veps2 = _mm512_set1_pd(eps2);
    const __m512d half = _mm512_set1_pd(0.5), three_halves = _mm512_set1_pd(1.5), three = _mm512_set1_pd(3.0);
    __m512d acx = _mm512_setzero_pd(), acy = _mm512_setzero_pd(), acz = _mm512_setzero_pd();
    __m512d jkx = _mm512_setzero_pd(), jky = _mm512_setzero_pd(), jkz = _mm512_setzero_pd();
    for (std::size_t j = 0; j < n; j += 8)
    {
        __mmask8 live = n - j >= 8 ? __mmask8(0xFF) : static_cast<__mmask8>((1u << (n - j)) - 1u);
        if (i >= j && i < j + 8)
        {
            live &= static_cast<__mmask8>(~(1u << (i - j)));
        }
        const __m512d dx = _mm512_sub_pd(_mm512_maskz_loadu_pd(live, x + j), vxi_);
        const __m512d dy = _mm512_sub_pd(_mm512_maskz_loadu_pd(live, y + j), vyi_);
        const __m512d dz = _mm512_sub_pd(_mm512_maskz_loadu_pd(live, z + j), vzi_);
        const __m512d dvx = _mm512_sub_pd(_mm512_maskz_loadu_pd(live, vx + j), vvxi);
        const __m512d dvy = _mm512_sub_pd(_mm512_maskz_loadu_pd(live, vy + j), vvyi);
        const __m512d dvz = _mm512_sub_pd(_mm512_maskz_loadu_pd(live, vz + j), vvzi);
        const __m512d r2 = _mm512_fmadd_pd(dx, dx, _mm512_fmadd_pd(dy, dy, _mm512_fmadd_pd(dz, dz, veps2)));
        const __m512d hr2 = _mm512_mul_pd(half, r2);
        __m512d rinv = _mm512_rsqrt14_pd(r2);
        rinv = _mm512_mul_pd(rinv, _mm512_fnmadd_pd(hr2, _mm512_mul_pd(rinv, rinv), three_halves));
        rinv = _mm512_maskz_mul_pd(live, rinv, _mm512_fnmadd_pd(hr2, _mm512_mul_pd(rinv, rinv), three_halves));
        const __m512d rinv2 = _mm512_mul_pd(rinv, rinv);
        const __m512d mr3 = _mm512_mul_pd(_mm512_maskz_loadu_pd(live, m + j), _mm512_mul_pd(rinv, rinv2));
        const __m512d rv = _mm512_fmadd_pd(dx, dvx, _mm512_fmadd_pd(dy, dvy, _mm512_mul_pd(dz, dvz)));
        const __m512d alpha = _mm512_mul_pd(three, _mm512_mul_pd(rv, rinv2));
        acx = _mm512_fmadd_pd(mr3, dx, acx);
        acy = _mm512_fmadd_pd(mr3, dy, acy);
        acz = _mm512_fmadd_pd(mr3, dz, acz);
        jkx = _mm512_fmadd_pd(mr3, _mm512_fnmadd_pd(alpha, dx, dvx), jkx);
        jky = _mm512_fmadd_pd(mr3, _mm512_fnmadd_pd(alpha, dy, dvy), jky);
        jkz = _mm512_fmadd_pd(mr3, _mm512_fnmadd_pd(alpha, dz, dvz), jkz);
    }
    sax = _mm512_reduce_add_pd(acx);
    say = _mm512_reduce_add_pd(acy);
    saz = _mm512_reduce_add_pd(acz);
    sjx = _mm512_reduce_add_pd(jkx);
    sjy = _mm512_reduce_add_pd(jky);
    sjz = _mm512_reduce_add_pd(jkz);
#else
    // Two ranges skip the self term, which is singular without softening.
    const std::size_t ranges[2][2] = {{0, i}, {i + 1, n}};
    for (const auto& range : ranges)
    {
#pragma omp simd reduction(+ : sax, say, saz, sjx, sjy, sjz)
        for (std::size_t j = range[0]; j < range[1]; ++j)
        {
            const double dx = x[j] - xi;
            const double dy = y[j] - yi;
            const double dz = z[j] - zi;
            const double dvx = vx[j] - vxi;
            const double dvy = vy[j] - vyi;
            const double dvz = vz[j] - vzi;
            const double rinv2 = 1.0 / (dx * dx + dy * dy + dz * dz + eps2);
            const double mr3 = m[j] * rinv2 * std::sqrt(rinv2);
            const double alpha = 3.0 * (dx * dvx + dy * dvy + dz * dvz) * rinv2;
            sax += mr3 * dx;
            say += mr3 * dy;
            saz += mr3 * dz;
            sjx += mr3 * (dvx - alpha * dx);
            sjy += mr3 * (dvy - alpha * dy);
            sjz += mr3 * (dvz - alpha * dz);
        }
    }
#endif
    ax = sax;
    ay = say;
    az = saz;
    jx = sjx;
    jy = sjy;
    jz = sjz;
}

void HermiteIntegrator::correct(std::size_t i, double t_new, double ax, double ay, double az, double jx, double jy,
                                double jz)
{
    const double h = t_new - t_[i];
    const double hinv = 1.0 / h;
    const double hinv2 = hinv * hinv;
    const double hinv3 = hinv2 * hinv;

    // Snap and crackle at the start of the step from the Hermite interpolant.
    const double dax = ax_[i] - ax, day = ay_[i] - ay, daz = az_[i] - az;
    const double s0x = (-6.0 * dax - h * (4.0 * jx_[i] + 2.0 * jx)) * hinv2;
    const double s0y = (-6.0 * day - h * (4.0 * jy_[i] + 2.0 * jy)) * hinv2;
    const double s0z = (-6.0 * daz - h * (4.0 * jz_[i] + 2.0 * jz)) * hinv2;
    const double cx = (12.0 * dax + 6.0 * h * (jx_[i] + jx)) * hinv3;
    const double cy = (12.0 * day + 6.0 * h * (jy_[i] + jy)) * hinv3;
    const double cz = (12.0 * daz + 6.0 * h * (jz_[i] + jz)) * hinv3;

    const double h2 = h * h;
    const double h3 = h2 * h;
    const double h4 = h3 * h;
    const double h5 = h4 * h;
    x_[i] = px_[i] + s0x * h4 / 24.0 + cx * h5 / 120.0;
    y_[i] = py_[i] + s0y * h4 / 24.0 + cy * h5 / 120.0;
    z_[i] = pz_[i] + s0z * h4 / 24.0 + cz * h5 / 120.0;
    vx_[i] = pvx_[i] + s0x * h3 / 6.0 + cx * h4 / 24.0;
    vy_[i] = pvy_[i] + s0y * h3 / 6.0 + cy * h4 / 24.0;
    vz_[i] = pvz_[i] + s0z * h3 / 6.0 + cz * h4 / 24.0;

    if (!std::isfinite(x_[i] + y_[i] + z_[i] + vx_[i] + vy_[i] + vz_[i]))
    {
        throw Error(ErrorCode::Diverged, "direct: non-finite state for particle " +
                                             std::to_string(meta_.particles[i].id) + " at t=" + std::to_string(t_new));
    }

    ax_[i] = ax;
    ay_[i] = ay;
    az_[i] = az;
    jx_[i] = jx;
    jy_[i] = jy;
    jz_[i] = jz;
    sx_[i] = s0x + h * cx;
    sy_[i] = s0y + h * cy;
    sz_[i] = s0z + h * cz;
    t_[i] = t_new;

    const double dt_old = dt_[i];
    double dt = aarseth_timestep({ax, ay, az}, {jx, jy, jz}, {sx_[i], sy_[i], sz_[i]}, {cx, cy, cz}, params_);
    dt = std::min(dt, std::max(params_.dt_min, floor_pow2(2.0 * dt_old)));
    // Keep the particle on the block grid anchored at the epoch.
    while (dt > params_.dt_min && std::fmod(t_new - epoch_, dt) != 0.0)
    {
        dt *= 0.5;
    }
    dt_[i] = dt;
}

void HermiteIntegrator::step_block(double t_block)
{
    predict(t_block);
    for (const std::uint32_t i : active_)
    {
        double ax = 0, ay = 0, az = 0, jx = 0, jy = 0, jz = 0;
        force_on(i, ax, ay, az, jx, jy, jz);
        correct(i, t_block, ax, ay, az, jx, jy, jz);
    }
    const std::size_t n = mass_.size();
    interactions_ += active_.size() * (n > 0 ? n - 1 : 0);
    ++blocks_;
    block_time_ = t_block;
}

bool HermiteIntegrator::advance_to(double t_end, const DirectObserver& observer)
{
    if (!(t_end >= block_time_))
    {
        throw Error(ErrorCode::InvalidArgument, "direct: t_end precedes the current time");
    }
    const std::size_t n = mass_.size();
    if (n == 0)
    {
        block_time_ = epoch_ = t_end;
        return true;
    }
    for (;;)
    {
        double t_next = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i)
        {
            t_next = std::min(t_next, t_[i] + dt_[i]);
        }
        if (t_next > t_end)
        {
            break;
        }
        active_.clear();
        for (std::size_t i = 0; i < n; ++i)
        {
            if (t_[i] + dt_[i] == t_next)
            {
                active_.push_back(static_cast<std::uint32_t>(i));
            }
        }
        step_block(t_next);
        if (observer && observer(*this) == StepControl::Stop)
        {
            return false;
        }
        if (t_next == t_end)
        {
            break;
        }
    }

    // Bring stragglers to t_end with a final, generally non-power-of-two step
    // and re-anchor the block grid there.
    active_.clear();
    for (std::size_t i = 0; i < n; ++i)
    {
        if (t_[i] < t_end)
        {
            active_.push_back(static_cast<std::uint32_t>(i));
        }
    }
    if (!active_.empty())
    {
        epoch_ = t_end;
        step_block(t_end);
        if (observer)
        {
            observer(*this);
        }
    }
    block_time_ = t_end;
    return true;
}

ParticleSet HermiteIntegrator::state() const
{
    ParticleSet ps = meta_;
    ps.time = block_time_;
    for (std::size_t i = 0; i < ps.size(); ++i)
    {
        ps.particles[i].position = {x_[i], y_[i], z_[i]};
        ps.particles[i].velocity = {vx_[i], vy_[i], vz_[i]};
    }
    return ps;
}

ParticleSet direct_evolve(const ParticleSet& ps, const DirectParams& params, double t_end,
                          const DirectObserver& observer)
{
    validate(params);
    if (!(t_end >= ps.time))
    {
        throw Error(ErrorCode::InvalidArgument, "direct_evolve: t_end precedes the current time");
    }
    if (t_end == ps.time)
    {
        return ps;
    }
    HermiteIntegrator integrator(ps, params);
    integrator.advance_to(t_end, observer);
    return integrator.state();
}

} // namespace living

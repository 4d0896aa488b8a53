#pragma once

// Split-step Fourier propagation of the two-component spinor on a periodic
// 1D grid. Independent of the Gaussian-parameter algebra in
// spinor_dynamics.hpp and used to check it.

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <mutex>
#include <ostream>
#include <vector>

#include "core.hpp"

namespace clocksim {

class GridTooSmall : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class StepSizeError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

struct GridSpec {
    double length = 0.0;   // m
    std::size_t points = 0;
    double dt = 0.0;       // s, upper bound on the Strang step
    double center = 0.0;   // m, lab position of the box center

    double spacing() const { return length / static_cast<double>(points); }

    /// dt <= m dz^2 / (pi hbar)
    double max_stable_dt() const {
        const double dz = spacing();
        return dz * dz / (std::numbers::pi * hbar_over_m);
    }

    double z(std::size_t i) const {
        return center + (static_cast<double>(i) - 0.5 * static_cast<double>(points)) * spacing();
    }

    void validate() const {
        if (points < 256 || (points & (points - 1)) != 0)
            throw InvalidParameter("GridSpec: points must be a power of two >= 256");
        if (!(length > 0.0)) throw InvalidParameter("GridSpec: length must be positive");
    }
};

struct GridSpinor {
    GridSpec grid;
    std::array<std::vector<cplx>, 2> psi; // |1>, |2>
    double time = 0.0;

    double norm() const {
        double s = 0.0;
        for (const auto& c : psi)
            for (const auto& v : c) s += std::norm(v);
        return s * grid.spacing();
    }

    std::vector<double> density() const {
        std::vector<double> d(grid.points);
        for (std::size_t i = 0; i < grid.points; ++i) d[i] = std::norm(psi[0][i]) + std::norm(psi[1][i]);
        return d;
    }

    /// Discrete overlap sum conj(a) b dz on one level.
    cplx inner(const GridSpinor& other, Level level) const {
        const auto& a = psi[level_index(level)];
        const auto& b = other.psi[level_index(level)];
        cplx s{0.0, 0.0};
        for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
        return s * grid.spacing();
    }

    void write_csv(std::ostream& os) const {
        os << "z_um,density1_per_um,density2_per_um\n";
        os.precision(17);
        for (std::size_t i = 0; i < grid.points; ++i) {
            os << units::to_um(grid.z(i)) << ',' << std::norm(psi[0][i]) * units::kMicrometer << ','
               << std::norm(psi[1][i]) * units::kMicrometer << '\n';
        }
    }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

/// In-place complex FFT pair over one buffer; planning is serialized because
/// the FFTW planner is not thread-safe.
class FftPlan {
public:
    explicit FftPlan(std::vector<cplx>& buffer) : n_(buffer.size()) {
        auto* data = reinterpret_cast<fftw_complex*>(buffer.data());
        std::lock_guard lock(fftw_planner_mutex());
        forward_ = fftw_plan_dft_1d(static_cast<int>(n_), data, data, FFTW_FORWARD, FFTW_ESTIMATE);
        backward_ = fftw_plan_dft_1d(static_cast<int>(n_), data, data, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;
    ~FftPlan() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(backward_);
    }

    void forward() { fftw_execute(forward_); }
    void backward() { fftw_execute(backward_); }

private:
    std::size_t n_;
    fftw_plan forward_ = nullptr;
    fftw_plan backward_ = nullptr;
};

inline std::vector<double> wavenumbers(const GridSpec& g) {
    std::vector<double> k(g.points);
    const double dk = 2.0 * std::numbers::pi / g.length;
    const auto n = static_cast<long>(g.points);
    for (long i = 0; i < n; ++i) k[static_cast<std::size_t>(i)] = dk * static_cast<double>(i < n / 2 ? i : i - n);
    return k;
}

} // namespace detail

/// Evaluates an analytic spinor on the grid and renormalizes it discretely.
/// The density at both box edges must be below 1e-14 of its peak.
inline GridSpinor sample_state(const SpinorState& state, const GridSpec& grid) {
    grid.validate();
    state.validate();
    GridSpinor g;
    g.grid = grid;
    g.time = state.time;
    for (Level level : {Level::one, Level::two}) {
        auto& v = g.psi[level_index(level)];
        v.resize(grid.points);
        for (std::size_t i = 0; i < grid.points; ++i) v[i] = state.amplitude_at(level, grid.z(i));
    }
    const auto dens = g.density();
    const double peak = *std::max_element(dens.begin(), dens.end());
    if (!(peak > 0.0)) throw GridTooSmall("sample_state: state has no weight inside the box");
    if (dens.front() > 1e-14 * peak || dens.back() > 1e-14 * peak)
        throw GridTooSmall("sample_state: envelope tails reach the box edges");
    const double n = g.norm();
    for (auto& c : g.psi)
        for (auto& v : c) v /= std::sqrt(n);
    return g;
}

/// Potential energy (J) of a level at position z and time t.
using LevelPotential = std::function<double(Level, double z, double t)>;

/// Linear Zeeman potential of a gradient: V_m(z) = -m (mu_B / 2) (dB/dz) z.
inline LevelPotential gradient_potential(double gradient, double z_ref = 0.0) {
    return [gradient, z_ref](Level l, double z, double) {
        return -magnetic_number(l) * 0.5 * kConst.mu_bohr * gradient * (z - z_ref);
    };
}

/// Strang split-step evolution (half kinetic, potential, half kinetic). With an
/// empty potential the kinetic propagator is applied once for the whole
/// duration, which is exact on the grid.
inline GridSpinor propagate(const GridSpinor& in, const LevelPotential& potential, double duration) {
    if (!(duration >= 0.0)) throw InvalidParameter("propagate: duration must be >= 0");
    GridSpinor out = in;
    if (duration == 0.0) return out;

    const GridSpec& g = in.grid;
    const auto k = detail::wavenumbers(g);
    const double n0 = in.norm();

    std::size_t steps = 1;
    double h = duration;
    if (potential) {
        if (!(g.dt > 0.0) || g.dt > g.max_stable_dt())
            throw StepSizeError("propagate: dt violates dt <= m dz^2 / (pi hbar)");
        steps = static_cast<std::size_t>(std::ceil(duration / g.dt - 1e-12));
        h = duration / static_cast<double>(steps);
    }

    const double inv_n = 1.0 / static_cast<double>(g.points);
    for (Level level : {Level::one, Level::two}) {
        auto& buf = out.psi[level_index(level)];
        detail::FftPlan plan(buf);

        if (!potential) {
            plan.forward();
            for (std::size_t i = 0; i < g.points; ++i)
                buf[i] *= std::polar(inv_n, -0.5 * hbar_over_m * k[i] * k[i] * duration);
            plan.backward();
            continue;
        }

        std::vector<cplx> half_kin(g.points);
        for (std::size_t i = 0; i < g.points; ++i)
            half_kin[i] = std::polar(inv_n, -0.25 * hbar_over_m * k[i] * k[i] * h);
        std::vector<double> zs(g.points);
        for (std::size_t i = 0; i < g.points; ++i) zs[i] = g.z(i);

        for (std::size_t s = 0; s < steps; ++s) {
            const double t_mid = in.time + (static_cast<double>(s) + 0.5) * h;
            plan.forward();
            for (std::size_t i = 0; i < g.points; ++i) buf[i] *= half_kin[i];
            plan.backward();
            for (std::size_t i = 0; i < g.points; ++i)
                buf[i] *= std::polar(1.0, -potential(level, zs[i], t_mid) * h / kConst.hbar);
            plan.forward();
            for (std::size_t i = 0; i < g.points; ++i) buf[i] *= half_kin[i];
            plan.backward();
        }
    }
    out.time = in.time + duration;
    if (std::abs(out.norm() - n0) > 1e-6)
        throw StepSizeError("propagate: norm drift above 1e-6, reduce the step");
    return out;
}

/// Strongest Fourier component of a real sequence at index >= min_index
/// (use it to skip the envelope's low-frequency content) and its period.
struct SpectralPeak {
    std::size_t index = 0;
    double period = 0.0;
};

inline SpectralPeak dominant_period(const std::vector<double>& values, double spacing, std::size_t min_index = 1) {
    const std::size_t n = values.size();
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    std::vector<cplx> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = values[i] - mean;
    detail::FftPlan plan(buf);
    plan.forward();
    SpectralPeak best;
    double amp = -1.0;
    for (std::size_t i = std::max<std::size_t>(min_index, 1); i <= n / 2; ++i) {
        if (std::abs(buf[i]) > amp) {
            amp = std::abs(buf[i]);
            best.index = i;
        }
    }
    best.period = static_cast<double>(n) * spacing / static_cast<double>(best.index);
    return best;
}

/// The kicked four-term state (two packets at +-d/2 in the equal-weight clock
/// superposition, |1> kicked by k and |2> by 2k) propagated for time t on the
/// grid. Returns sum_level |psi_level|^2 with the grid.
struct GridPattern {
    GridSpinor final_state;
    std::vector<double> density;
};

inline GridPattern far_field_pattern(double d, double k, double t, cplx alpha, const GridSpec& grid) {
    if (!(d > 0.0)) throw InvalidParameter("far_field_pattern: separation must be positive");
    const double amp = 0.5;
    std::vector<GaussianTerm> terms;
    for (double c : {0.5 * d, -0.5 * d}) {
        for (Level l : {Level::one, Level::two}) {
            const int m = magnetic_number(l);
            GaussianTerm term{l, c, m * kConst.hbar * k, alpha, {amp, 0.0}, m * k * c};
            terms.push_back(term);
        }
    }
    SpinorState s{terms, 0.0};
    GridPattern r;
    r.final_state = propagate(sample_state(s, grid), {}, t);
    r.density = r.final_state.density();
    return r;
}

} // namespace clocksim

#pragma once

// Analytic-vs-grid comparisons: free flight, far-field pattern, finite
// gradient pulse, and the dt-convergence study of the Strang scheme.

#include <cmath>
#include <string>
#include <vector>

#include "detection.hpp"
#include "grid_oracle.hpp"
#include "spinor_dynamics.hpp"

namespace clocksim {

struct OracleConfig {
    std::size_t points = 1 << 14;
    double box = 400e-6;
    double dt = 0.2e-6;
    double separation = 1e-6;
    double sigma0 = 0.1e-6;
    double flight = 6.5e-3;       // far-field flight time
    double free_flight = 1e-3;    // single-Gaussian check
    double phase = 1.3;           // k d of the far-field check
    double gradient_duration = 10e-6;
    double free_tolerance = 1e-6;       // relative to peak density
    double far_field_tolerance = 1e-3;  // relative to peak density
    // dt-convergence study (harmonic trap, small grid)
    std::size_t conv_points = 1024;
    double conv_box = 40e-6;
    double conv_frequency = 2e3; // Hz
    double conv_dt = 0.5e-6;
};

struct CheckResult {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::string message;
};

namespace detail {

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double err = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        err = std::max(err, std::abs(a[i] - b[i]));
        peak = std::max(peak, std::abs(b[i]));
    }
    return err / peak;
}

template <class Fn>
CheckResult guarded(const std::string& name, double tol, Fn&& fn) {
    CheckResult r;
    r.name = name;
    r.tolerance = tol;
    try {
        r = fn();
        r.name = name;
        r.tolerance = tol;
    } catch (const Error& e) {
        r.passed = false;
        r.value = std::numeric_limits<double>::quiet_NaN();
        r.message = e.what();
    }
    return r;
}

} // namespace detail

inline GridSpec oracle_grid(const OracleConfig& c) { return {c.box, c.points, c.dt, 0.0}; }

/// A moving minimal Gaussian in free flight, grid vs analytic density.
inline CheckResult check_free_flight(const OracleConfig& c) {
    return detail::guarded("free_flight", c.free_tolerance, [&] {
        const double k = 1e6;
        GaussianTerm t{Level::two, 0.0, kConst.hbar * k, alpha_from_waist(c.sigma0, 0.0, 0.0), {1.0, 0.0}, 0.0};
        SpinorState s{{t}, 0.0};
        const GridSpec g = oracle_grid(c);
        const auto grid = propagate(sample_state(s, g), {}, c.free_flight);
        const auto exact = free_flight(s, c.free_flight);
        std::vector<double> ref(g.points);
        for (std::size_t i = 0; i < g.points; ++i) ref[i] = exact.density_at(g.z(i));
        CheckResult r;
        r.value = detail::max_rel_error(grid.density(), ref);
        r.passed = r.value < c.free_tolerance;
        return r;
    });
}

/// Four-term kicked state propagated to the far field vs the closed-form
/// two-pattern density in the frame moving with 3 hbar k / 2.
inline CheckResult check_far_field(const OracleConfig& c) {
    return detail::guarded("far_field", c.far_field_tolerance, [&] {
        const double k = c.phase / c.separation;
        const auto pat = far_field_pattern(c.separation, k, c.flight, alpha_from_waist(c.sigma0, 0.0, 0.0),
                                           oracle_grid(c));
        const auto p = fringe_parameters(c.separation, k, c.flight, 0.0, c.sigma0);
        if (!p.far_field) throw InvalidParameter("far_field: flight time below the far-field guard");
        const double cm = 1.5 * hbar_over_m * k * c.flight;
        const auto& g = pat.final_state.grid;
        std::vector<double> ref(g.points);
        for (std::size_t i = 0; i < g.points; ++i) ref[i] = detection_probability(p, g.z(i) - cm);
        CheckResult r;
        r.value = detail::max_rel_error(pat.density, ref);
        r.passed = r.value < c.far_field_tolerance;
        return r;
    });
}

/// Finite gradient pulse as a linear potential on the grid, then free flight,
/// against the analytic midpoint impulse; also checks that the FFT peak of
/// the final density sits at the predicted fringe period (one frequency bin).
inline CheckResult check_gradient_pulse(const OracleConfig& c) {
    return detail::guarded("gradient_pulse", c.far_field_tolerance, [&] {
        const double k = c.phase / c.separation;
        const double gradient = k / (kConst.mu_bohr / (2.0 * kConst.hbar) * c.gradient_duration);
        auto s = make_split_state(c.separation, alpha_from_waist(c.sigma0, 0.0, 0.0));
        s = apply_rf(s, RfPulse{std::numbers::pi / 2.0, 1.0, 0.0, 0.0});
        s.time = 0.0;
        const GridSpec g = oracle_grid(c);
        auto grid = propagate(sample_state(s, g), gradient_potential(gradient), c.gradient_duration);
        grid = propagate(grid, {}, c.flight);

        auto a = free_flight(s, 0.5 * c.gradient_duration);
        a = apply_gradient(a, GradientImpulse{gradient, c.gradient_duration});
        a = free_flight(a, 0.5 * c.gradient_duration + c.flight);
        std::vector<double> ref(g.points);
        for (std::size_t i = 0; i < g.points; ++i) ref[i] = a.density_at(g.z(i));
        const auto dens = grid.density();

        CheckResult r;
        r.value = detail::max_rel_error(dens, ref);
        const auto p = fringe_parameters(c.separation, k, c.flight + 0.5 * c.gradient_duration,
                                         0.5 * c.gradient_duration, c.sigma0);
        // envelope spectrum ~ exp(-(K sigma_t / 2)^2) is negligible beyond K = 4 / sigma_t
        const auto cutoff = static_cast<std::size_t>(std::ceil(4.0 / p.sigma_t * g.length / (2.0 * std::numbers::pi)));
        const auto peak = dominant_period(dens, g.spacing(), cutoff);
        const double predicted_bin = g.length / p.lambda_t;
        const bool bin_ok = std::abs(static_cast<double>(peak.index) - predicted_bin) <= 1.0;
        r.passed = r.value < c.far_field_tolerance && bin_ok;
        if (!bin_ok) r.message = "fringe period off by more than one frequency bin";
        return r;
    });
}

struct ConvergenceStudy {
    std::vector<double> dts;
    std::vector<double> errors; // relative L-inf density error
    std::vector<double> ratios; // errors[i] / errors[i+1]
};

/// Displaced ground state in a harmonic trap (exact: rigid oscillation) at
/// dt, dt/2, dt/4. Free and linear potentials are exact under Strang
/// splitting, so the trap is what exposes the second-order error.
inline ConvergenceStudy convergence_study(const OracleConfig& c) {
    const double w = 2.0 * std::numbers::pi * c.conv_frequency;
    const double sig = std::sqrt(hbar_over_m / w);
    const double amp = 2.0 * sig * 4.0;
    const double period = 1.0 / c.conv_frequency;
    GaussianTerm t{Level::two, amp, 0.0, cplx(0.5 / (sig * sig), 0.0), {1.0, 0.0}, 0.0};
    const SpinorState s{{t}, 0.0};
    LevelPotential trap = [w](Level, double z, double) { return 0.5 * kConst.mass * w * w * z * z; };

    ConvergenceStudy st;
    for (double dt : {c.conv_dt, 0.5 * c.conv_dt, 0.25 * c.conv_dt}) {
        GridSpec g{c.conv_box, c.conv_points, dt, 0.0};
        const auto out = propagate(sample_state(s, g), trap, 0.25 * period);
        // quarter period: center at 0 moving with momentum -m w amp
        GaussianTerm e = t;
        e.center = amp * std::cos(0.5 * std::numbers::pi);
        SpinorState ex{{e}, 0.0};
        std::vector<double> ref(g.points);
        for (std::size_t i = 0; i < g.points; ++i) ref[i] = ex.density_at(g.z(i));
        st.dts.push_back(dt);
        st.errors.push_back(detail::max_rel_error(out.density(), ref));
    }
    for (std::size_t i = 0; i + 1 < st.errors.size(); ++i) st.ratios.push_back(st.errors[i] / st.errors[i + 1]);
    return st;
}

inline CheckResult check_convergence(const OracleConfig& c) {
    return detail::guarded("dt_convergence", 0.0, [&] {
        const auto st = convergence_study(c);
        CheckResult r;
        r.value = st.ratios.back();
        r.passed = true;
        for (double q : st.ratios) r.passed = r.passed && q > 3.5 && q < 4.5;
        if (!r.passed) r.message = "error ratio under dt halving not close to 4";
        return r;
    });
}

inline std::vector<CheckResult> run_oracle_checks(const OracleConfig& c) {
    return {check_free_flight(c), check_far_field(c), check_gradient_pulse(c), check_convergence(c)};
}

} // namespace clocksim

#pragma once

// Analytic evolution of a SpinorState through the sequence primitives:
// beam-splitter output state, RF rotations, gradient impulses and free flight.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include "core.hpp"

namespace clocksim {

struct RfPulse {
    double rabi_frequency = 0.0; // rad/s
    double duration = 0.0;       // s
    double detuning = 0.0;       // rad/s
    double phase = 0.0;          // rad

    double area() const { return rabi_frequency * duration; }
};

struct GradientImpulse {
    double gradient = 0.0; // dB/dz, T/m
    double duration = 0.0; // s

    /// Wavenumber imprinted on |1>; |2> receives twice this.
    /// k = (mu_B / 2 hbar) (dB/dz) T_G
    double wavenumber() const {
        return kConst.mu_bohr / (2.0 * kConst.hbar) * gradient * duration;
    }
};

/// Two-level RF propagator in the {|1>, |2>} basis, U = exp(-i H T) with
/// H = 1/2 [[-delta, Omega e^{i phi}], [Omega e^{-i phi}, delta]].
inline std::array<std::array<cplx, 2>, 2> rf_unitary(const RfPulse& p) {
    const double gen = std::hypot(p.rabi_frequency, p.detuning);
    if (gen == 0.0 || p.duration == 0.0) return {{{1.0, 0.0}, {0.0, 1.0}}};
    const double half = 0.5 * gen * p.duration;
    const double c = std::cos(half);
    const double s = std::sin(half);
    const double dr = p.detuning / gen;
    const double wr = p.rabi_frequency / gen;
    return {{{cplx(c, dr * s), -1i * wr * s * std::polar(1.0, p.phase)},
             {-1i * wr * s * std::polar(1.0, -p.phase), cplx(c, -dr * s)}}};
}

namespace detail {

inline bool same_spatial_mode(const GaussianTerm& a, const GaussianTerm& b) {
    return a.center == b.center && a.momentum == b.momentum && a.alpha == b.alpha;
}

/// Merges terms that share level and spatial mode; phases are folded into the
/// amplitude of the merged term.
inline std::vector<GaussianTerm> merge_terms(const std::vector<GaussianTerm>& in) {
    std::vector<GaussianTerm> out;
    for (const auto& t : in) {
        auto it = std::find_if(out.begin(), out.end(), [&](const GaussianTerm& o) {
            return o.level == t.level && same_spatial_mode(o, t);
        });
        if (it == out.end()) {
            out.push_back(t);
        } else {
            it->amplitude = it->coefficient() + t.coefficient();
            it->phase = 0.0;
        }
    }
    return out;
}

} // namespace detail

/// Post-beam-splitter state: two normalized |level> packets at +-d/2 with equal
/// weight and zero relative momentum.
inline SpinorState make_split_state(double separation, cplx alpha, Level level = Level::two,
                                    double time = 0.0) {
    if (!(separation >= 0.0)) throw InvalidParameter("make_split_state: separation must be >= 0");
    if (!(alpha.real() > 0.0)) throw InvalidParameter("make_split_state: Re(alpha) must be > 0");

    GaussianTerm upper{level, 0.5 * separation, 0.0, alpha, {1.0, 0.0}, 0.0};
    GaussianTerm lower{level, -0.5 * separation, 0.0, alpha, {1.0, 0.0}, 0.0};
    const double cross = overlap(upper, lower).real();
    const double c = 1.0 / std::sqrt(2.0 + 2.0 * cross);
    upper.amplitude = c;
    lower.amplitude = c;

    SpinorState s;
    s.time = time;
    if (separation == 0.0) {
        upper.amplitude = 1.0;
        s.terms = {upper};
    } else {
        s.terms = {upper, lower};
    }
    return s;
}

/// Spatially uniform RF rotation, applied to the internal amplitudes of each
/// spatial mode. Terms that end up with exactly zero amplitude are dropped.
/// Like apply_gradient this is an impulse: the state's clock is not advanced.
inline SpinorState apply_rf(const SpinorState& state, const RfPulse& pulse) {
    state.validate();
    if (pulse.rabi_frequency < 0.0 || pulse.duration < 0.0)
        throw InvalidParameter("apply_rf: Rabi frequency and duration must be >= 0");

    const auto u = rf_unitary(pulse);
    std::vector<GaussianTerm> produced;
    produced.reserve(2 * state.terms.size());
    for (const auto& t : state.terms) {
        const std::size_t col = level_index(t.level);
        for (Level out : {Level::one, Level::two}) {
            const cplx m = u[level_index(out)][col];
            if (m == cplx{0.0, 0.0}) continue;
            GaussianTerm n = t;
            n.level = out;
            n.amplitude = m * t.coefficient();
            n.phase = 0.0;
            produced.push_back(n);
        }
    }

    SpinorState s;
    s.time = state.time;
    s.terms = detail::merge_terms(produced);
    std::erase_if(s.terms, [](const GaussianTerm& t) { return t.amplitude == cplx{0.0, 0.0}; });
    return s;
}

/// Impulse approximation of a linear Zeeman potential: a term on level m gains
/// exp(i m k z), i.e. momentum m hbar k and a center phase m k z_c.
/// The state's clock is not advanced; callers place the impulse in time.
inline SpinorState apply_gradient(const SpinorState& state, const GradientImpulse& impulse) {
    state.validate();
    if (impulse.duration < 0.0) throw InvalidParameter("apply_gradient: duration must be >= 0");
    const double k = impulse.wavenumber();
    SpinorState s = state;
    for (auto& t : s.terms) {
        const int m = magnetic_number(t.level);
        t.momentum += m * kConst.hbar * k;
        t.phase += m * k * t.center;
    }
    return s;
}

/// Momentum kick referenced to each packet's own center: no relative phase
/// between packets, only a change of motion. Used for residual breakup.
inline SpinorState apply_centered_kick(const SpinorState& state, Level level, double wavenumber) {
    SpinorState s = state;
    for (auto& t : s.terms)
        if (t.level == level) t.momentum += kConst.hbar * wavenumber;
    return s;
}

/// Exact free evolution of every Gaussian term for a time t.
inline SpinorState free_flight(const SpinorState& state, double t) {
    state.validate();
    if (!(t >= 0.0)) throw InvalidParameter("free_flight: time must be >= 0");
    SpinorState s = state;
    s.time += t;
    if (t == 0.0) return s;
    for (auto& term : s.terms) {
        const cplx q0 = 0.5 / term.alpha;
        const cplx q = q0 + 1i * hbar_over_m * t;
        const double kappa = term.wavenumber();
        term.center += term.momentum / kConst.mass * t;
        term.alpha = 0.5 / q;
        // Re q > 0, so both arguments lie in (-pi/2, pi/2).
        term.phase += 0.5 * hbar_over_m * kappa * kappa * t + 0.5 * (std::arg(q0) - std::arg(q));
    }
    return s;
}

struct ClockOverlap {
    cplx value{0.0, 0.0};
    bool ambiguous = false; // packets closer than their widths
};

/// Scalar product of the clock states carried by the two spatial packets.
/// On each level the lower-center term is packet 1 and the upper one packet 2;
/// spatial shapes are compared after translating both to a common center.
/// The result is normalized by the weights of the two packets.
inline ClockOverlap clock_overlap(const SpinorState& state) {
    state.validate();
    ClockOverlap result;
    double weight_lo = 0.0;
    double weight_hi = 0.0;
    for (Level level : {Level::one, Level::two}) {
        std::vector<const GaussianTerm*> on_level;
        for (const auto& t : state.terms)
            if (t.level == level) on_level.push_back(&t);
        if (on_level.size() != 2)
            throw InvalidState("clock_overlap: each level needs exactly two spatial packets");
        const GaussianTerm* lo = on_level[0];
        const GaussianTerm* hi = on_level[1];
        if (lo->center > hi->center) std::swap(lo, hi);
        const double width = std::max(lo->width(), hi->width());
        if (hi->center - lo->center < width) result.ambiguous = true;
        result.value += overlap(lo->centered(), hi->centered());
        weight_lo += std::norm(lo->coefficient());
        weight_hi += std::norm(hi->coefficient());
    }
    result.value /= std::sqrt(weight_lo * weight_hi);
    return result;
}

} // namespace clocksim

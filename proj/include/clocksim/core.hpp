#pragma once

// Physical constants, lab-unit conversions and the Gaussian wave-packet
// representation shared by every other header in the library.

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace clocksim {

using cplx = std::complex<double>;
using namespace std::complex_literals;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Violated physical precondition (bad parameters, invalid state, ...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

class InvalidState : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class InvalidParameter : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

struct PhysicalConstants {
    double hbar = 1.054571817e-34;     // J s
    double mass = 1.44316e-25;         // kg, 87Rb
    double mu_bohr = 9.2740100783e-24; // J/T
    double g_f = 0.5;                  // F = 2
    double mu0 = 1.25663706212e-6;     // T m / A
};

inline constexpr PhysicalConstants kConst{};

/// hbar / m, the free-flight diffusion constant of the wave packets (m^2/s).
inline constexpr double hbar_over_m = 1.054571817e-34 / 1.44316e-25;

/// Conversions between SI internals and the lab units used at the interfaces.
namespace units {
inline constexpr double kMicrosecond = 1e-6;
inline constexpr double kMillisecond = 1e-3;
inline constexpr double kMicrometer = 1e-6;
inline constexpr double kGauss = 1e-4;

constexpr double from_us(double v) { return v * kMicrosecond; }
constexpr double to_us(double v) { return v / kMicrosecond; }
constexpr double from_ms(double v) { return v * kMillisecond; }
constexpr double to_ms(double v) { return v / kMillisecond; }
constexpr double from_um(double v) { return v * kMicrometer; }
constexpr double to_um(double v) { return v / kMicrometer; }
constexpr double from_gauss(double v) { return v * kGauss; }
constexpr double to_gauss(double v) { return v / kGauss; }
/// G/cm -> T/m
constexpr double from_gauss_per_cm(double v) { return v * kGauss / 1e-2; }
constexpr double to_gauss_per_cm(double v) { return v * 1e-2 / kGauss; }
/// rad/us <-> rad/s
constexpr double from_rad_per_us(double v) { return v / kMicrosecond; }
constexpr double to_rad_per_us(double v) { return v * kMicrosecond; }
} // namespace units

/// Internal level of the two-level clock: |1> = |F=2, mF=1>, |2> = |F=2, mF=2>.
/// The underlying value is the magnetic quantum number that scales the
/// Zeeman force in a field gradient.
enum class Level : int { one = 1, two = 2 };

constexpr int magnetic_number(Level l) { return static_cast<int>(l); }
constexpr std::size_t level_index(Level l) { return l == Level::one ? 0 : 1; }

/// Complex Gaussian width parameter from the minimal waist sigma0 reached at
/// time t0, evaluated at time t: alpha = 1 / (2 (sigma0^2 + i hbar (t - t0) / m)).
inline cplx alpha_from_waist(double sigma0, double t0, double t) {
    if (!(sigma0 > 0.0)) throw InvalidParameter("alpha_from_waist: sigma0 must be positive");
    return 1.0 / (2.0 * cplx(sigma0 * sigma0, hbar_over_m * (t - t0)));
}

/// One Gaussian wave packet attached to an internal level:
///
///   psi(z) = amplitude * exp(i phase) * (2 Re alpha / pi)^(1/4)
///            * exp(-alpha (z - center)^2 + i (momentum / hbar) (z - center))
///
/// The shape factor is normalized, so |amplitude|^2 is the packet's weight
/// when it does not overlap any other term of the same level.
struct GaussianTerm {
    Level level = Level::two;
    double center = 0.0;   // m
    double momentum = 0.0; // kg m / s
    cplx alpha{1.0, 0.0};  // 1/m^2
    cplx amplitude{1.0, 0.0};
    double phase = 0.0;    // accumulated scalar phase, rad

    double wavenumber() const { return momentum / kConst.hbar; }
    cplx coefficient() const { return amplitude * std::polar(1.0, phase); }

    /// 1/e half-width of |psi|^2, i.e. Re(alpha) = 1 / (2 width^2).
    double width() const { return std::sqrt(0.5 / alpha.real()); }

    void validate() const {
        if (!(alpha.real() > 0.0) || !std::isfinite(alpha.imag()))
            throw InvalidState("GaussianTerm: Re(alpha) must be strictly positive");
        if (level != Level::one && level != Level::two)
            throw InvalidState("GaussianTerm: level must be |1> or |2>");
    }

    cplx operator()(double z) const {
        const double u = z - center;
        const double shape_norm = std::pow(2.0 * alpha.real() / std::numbers::pi, 0.25);
        return coefficient() * shape_norm * std::exp(-alpha * u * u + 1i * wavenumber() * u);
    }

    /// Same packet, same level, translated to the origin.
    GaussianTerm centered() const {
        GaussianTerm t = *this;
        t.center = 0.0;
        return t;
    }
};

struct SpinorState {
    std::vector<GaussianTerm> terms;
    double time = 0.0; // s since release

    static constexpr std::size_t kMaxTerms = 4;

    /// psi_level(z), the coherent sum of all terms on that level.
    cplx amplitude_at(Level level, double z) const {
        cplx sum{0.0, 0.0};
        for (const auto& t : terms)
            if (t.level == level) sum += t(z);
        return sum;
    }

    /// sum_level |psi_level(z)|^2
    double density_at(double z) const {
        return std::norm(amplitude_at(Level::one, z)) + std::norm(amplitude_at(Level::two, z));
    }

    /// Density with every cross term between distinct packets dropped.
    double incoherent_density_at(double z) const {
        double s = 0.0;
        for (const auto& t : terms) s += std::norm(t(z));
        return s;
    }

    void validate() const {
        if (terms.empty()) throw InvalidState("SpinorState: no terms");
        for (const auto& t : terms) t.validate();
    }
};

namespace detail {

inline auto term_key(const GaussianTerm& t) {
    return std::make_tuple(t.center, t.momentum, t.alpha.real(), t.alpha.imag(), t.amplitude.real(),
                           t.amplitude.imag(), t.phase);
}

inline cplx overlap_ordered(const GaussianTerm& a, const GaussianTerm& b) {

    // Work relative to the midpoint of the two centers to keep the exponent small.
    const double mid = 0.5 * (a.center + b.center);
    const double za = a.center - mid;
    const double zb = b.center - mid;
    const double ka = a.wavenumber();
    const double kb = b.wavenumber();
    const cplx aa = std::conj(a.alpha);
    const cplx ab = b.alpha;

    // integrand = exp(-A s^2 + B s + C) in s = z - mid
    const cplx A = aa + ab;
    const cplx B = 2.0 * aa * za + 2.0 * ab * zb - 1i * ka + 1i * kb;
    const cplx C = -aa * za * za - ab * zb * zb + 1i * ka * za - 1i * kb * zb;

    const double na = std::pow(2.0 * a.alpha.real() / std::numbers::pi, 0.25);
    const double nb = std::pow(2.0 * b.alpha.real() / std::numbers::pi, 0.25);
    return std::conj(a.coefficient()) * b.coefficient() * na * nb *
           std::sqrt(std::numbers::pi / A) * std::exp(B * B / (4.0 * A) + C);
}

} // namespace detail

/// Analytic overlap <a|b> = integral conj(psi_a) psi_b dz. Terms on different
/// levels are orthogonal and give exactly zero. Evaluated in a fixed argument
/// order so that overlap(a, b) == conj(overlap(b, a)) holds bit for bit.
inline cplx overlap(const GaussianTerm& a, const GaussianTerm& b) {
    a.validate();
    b.validate();
    if (a.level != b.level) return {0.0, 0.0};
    const auto ka = detail::term_key(a), kb = detail::term_key(b);
    if (ka == kb) return {detail::overlap_ordered(a, b).real(), 0.0};
    return ka < kb ? detail::overlap_ordered(a, b) : std::conj(detail::overlap_ordered(b, a));
}

/// Integral over z of sum_level |psi_level|^2, from pairwise Gaussian overlaps.
inline double norm(const SpinorState& state) {
    state.validate();
    double total = 0.0;
    const auto& ts = state.terms;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        total += std::norm(ts[i].coefficient());
        for (std::size_t j = i + 1; j < ts.size(); ++j)
            total += 2.0 * overlap(ts[i], ts[j]).real();
    }
    return total;
}

/// Population of one level, the integral of |psi_level|^2.
inline double population(const SpinorState& state, Level level) {
    double total = 0.0;
    const auto& ts = state.terms;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        if (ts[i].level != level) continue;
        total += std::norm(ts[i].coefficient());
        for (std::size_t j = i + 1; j < ts.size(); ++j)
            if (ts[j].level == level) total += 2.0 * overlap(ts[i], ts[j]).real();
    }
    return total;
}

} // namespace clocksim

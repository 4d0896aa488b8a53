#pragma once

// Closed-form far-field observables of two interfering clock wave packets:
// the two level-resolved fringe patterns, their sum, and the local
// visibility / phase of the joint pattern.

#include <cmath>
#include <optional>
#include <vector>

#include "core.hpp"

namespace clocksim {

struct FringeParameters {
    double lambda_t = 0.0; // fringe period, m
    double sigma_t = 0.0;  // envelope width (density ~ exp(-z^2 / sigma_t^2)), m
    double phi_t = 0.0;    // relative phase of the |1> and |2> patterns, rad
    double dz_t = 0.0;     // envelope shift between the two patterns, m
    double t = 0.0;        // time since the gradient impulse, s
    double t0 = 0.0;       // waist time on the same clock, s
    double separation = 0.0;
    double wavenumber = 0.0; // k imprinted on |1>, 1/m
    double sigma0 = 0.0;
    bool far_field = true;   // hbar (t - t0) / m >= 10 sigma0^2
};

/// Fringe period, envelope, relative phase and envelope shift of the two
/// level patterns at time t after an impulse imprinting k (|1>) and 2k (|2>).
inline FringeParameters fringe_parameters(double d, double k, double t, double t0, double sigma0) {
    if (!(d > 0.0)) throw InvalidParameter("fringe_parameters: separation must be positive");
    if (!(sigma0 > 0.0)) throw InvalidParameter("fringe_parameters: sigma0 must be positive");
    if (t == t0) throw InvalidParameter("fringe_parameters: degenerate time t == t0");
    FringeParameters p;
    const double spread = hbar_over_m * (t - t0);
    p.lambda_t = 2.0 * std::numbers::pi * spread / d;
    p.sigma_t = sigma0 * std::sqrt(1.0 + std::pow(spread / (sigma0 * sigma0), 2));
    p.phi_t = k * d * t / (t - t0);
    p.dz_t = hbar_over_m * k * t;
    p.t = t;
    p.t0 = t0;
    p.separation = d;
    p.wavenumber = k;
    p.sigma0 = sigma0;
    p.far_field = spread >= 10.0 * sigma0 * sigma0;
    return p;
}

/// Builds parameters directly from the dimensionless pattern description,
/// for analysis and tests that do not start from a sequence.
inline FringeParameters fringe_parameters_from_pattern(double lambda, double sigma, double phi,
                                                       double dz) {
    FringeParameters p;
    p.lambda_t = lambda;
    p.sigma_t = sigma;
    p.phi_t = phi;
    p.dz_t = dz;
    return p;
}

namespace forms {

inline double fringe_k(const FringeParameters& p) { return 2.0 * std::numbers::pi / p.lambda_t; }

/// Sum of the two shifted level patterns, frame moving with the mean kick.
inline double two_patterns(const FringeParameters& p, double z) {
    const double s2 = p.sigma_t * p.sigma_t;
    const double kz = fringe_k(p) * z;
    const double e1 = std::exp(-std::pow(z + 0.5 * p.dz_t, 2) / s2);
    const double e2 = std::exp(-std::pow(z - 0.5 * p.dz_t, 2) / s2);
    return e1 * std::pow(std::cos(0.5 * (kz + 0.5 * p.phi_t)), 2) +
           e2 * std::pow(std::cos(0.5 * (kz - 0.5 * p.phi_t)), 2);
}

/// Single-envelope form; equals two_patterns / exp(-dz^2 / 4 sigma^2).
inline double single_envelope(const FringeParameters& p, double z) {
    const double s2 = p.sigma_t * p.sigma_t;
    const double x = z * p.dz_t / s2;
    const double kz = fringe_k(p) * z;
    return std::exp(-z * z / s2) *
           (std::cosh(x) * (1.0 + std::cos(0.5 * p.phi_t) * std::cos(kz)) +
            std::sinh(x) * std::sin(0.5 * p.phi_t) * std::sin(kz));
}

inline double prefactor(const FringeParameters& p) {
    return std::exp(-p.dz_t * p.dz_t / (4.0 * p.sigma_t * p.sigma_t));
}

} // namespace forms

inline double local_visibility(const FringeParameters& p, double z) {
    const double x = z * p.dz_t / (p.sigma_t * p.sigma_t);
    // 1 - sin^2(a)/cosh^2(x) = (sinh^2(x) + cos^2(a)) / cosh^2(x), without cancellation
    const double sh = std::sinh(x);
    const double ca = std::cos(0.5 * p.phi_t);
    return std::sqrt(sh * sh + ca * ca) / std::cosh(x);
}

/// Phase of the joint fringe pattern taken in the full quadrant, so that
/// P ~ env * [1 + V cos(2 pi z / lambda - phase)] holds with V >= 0.
inline double local_phase_full(const FringeParameters& p, double z) {
    const double x = z * p.dz_t / (p.sigma_t * p.sigma_t);
    return std::atan2(std::tanh(x) * std::sin(0.5 * p.phi_t), std::cos(0.5 * p.phi_t));
}

/// atan[tanh(z dz / sigma^2) tan(phi / 2)], the principal branch, which is
/// continuous in z and zero at z = 0. Where tan(phi/2) diverges it returns the
/// limit +-pi/2 with the sign of tanh(z dz / sigma^2) sin(phi/2).
inline double local_phase(const FringeParameters& p, double z) {
    double ph = local_phase_full(p, z);
    const double half_pi = 0.5 * std::numbers::pi;
    if (ph > half_pi) ph -= std::numbers::pi;
    if (ph < -half_pi) ph += std::numbers::pi;
    return ph;
}

namespace forms {
/// Envelope times [1 + V cos(kz - phase)], the third equivalent form.
inline double visibility_phase(const FringeParameters& p, double z) {
    const double s2 = p.sigma_t * p.sigma_t;
    const double x = z * p.dz_t / s2;
    return std::exp(-z * z / s2) * std::cosh(x) *
           (1.0 + local_visibility(p, z) * std::cos(fringe_k(p) * z - local_phase_full(p, z)));
}
} // namespace forms

/// Normalized detection probability density (1/m) of the joint pattern.
inline double detection_probability(const FringeParameters& p, double z) {
    const double ratio = std::numbers::pi * p.sigma_t / p.lambda_t;
    const double integral = std::sqrt(std::numbers::pi) * p.sigma_t * (1.0 + std::exp(-ratio * ratio));
    return forms::two_patterns(p, z) / integral;
}

/// Fitted-visibility floor at clock orthogonality, tanh(dz_t / sigma_t).
inline double breakup_floor(const FringeParameters& p) { return std::tanh(p.dz_t / p.sigma_t); }

struct FringeProfile {
    std::vector<double> z;       // m, relative to lab_offset
    std::vector<double> density; // 1/m
    std::optional<FringeParameters> params;
    double lab_offset = 0.0;     // m, position of the profile frame in the lab

    double spacing() const { return z.size() > 1 ? z[1] - z[0] : 0.0; }
};

/// Uniform grid of n points with spacing dz centered on zero.
inline std::vector<double> centered_grid(std::size_t n, double dz) {
    std::vector<double> z(n);
    const double half = 0.5 * static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) z[i] = (static_cast<double>(i) - half) * dz;
    return z;
}

inline FringeProfile fringe_profile(const FringeParameters& p, std::vector<double> z) {
    FringeProfile prof;
    prof.density.reserve(z.size());
    for (double v : z) prof.density.push_back(detection_probability(p, v));
    prof.z = std::move(z);
    prof.params = p;
    return prof;
}

struct TwoPatternSetup {
    std::vector<double> z;
    double lambda = 1.0;
    double sigma = 1.0; // width of the common localized wave function
};

struct TwoPatternResult {
    std::vector<double> clock_form;   // |psi_+ + psi_-|^2 from the spinor sum
    std::vector<double> phasor_form;  // |psi|^2 [1 + 1/4 e^{2 pi i z/l}(1 + e^{i phi}) + c.c.]
    std::vector<double> level_form;   // |psi|^2 [cos^2(pi z/l) + cos^2(pi z/l + phi/2)]
    double max_discrepancy = 0.0;
};

/// Fully overlapping, counter-propagating clock packets with relative clock
/// angle phi, evaluated as one clock interference pattern and as two
/// level-resolved patterns.
inline TwoPatternResult two_pattern_equivalence(double phi, const TwoPatternSetup& setup) {
    TwoPatternResult r;
    const double pi = std::numbers::pi;
    const double norm = std::pow(1.0 / (pi * setup.sigma * setup.sigma), 0.25);
    for (double z : setup.z) {
        const double psi = norm * std::exp(-z * z / (2.0 * setup.sigma * setup.sigma));
        const double psi2 = psi * psi;
        const double a = pi * z / setup.lambda;

        const cplx plus = std::polar(1.0, a) * 0.5;
        const cplx minus = std::polar(1.0, -a) * 0.5;
        const cplx c1 = psi * (plus + minus);
        const cplx c2 = psi * (plus * std::polar(1.0, 0.5 * phi) + minus * std::polar(1.0, -0.5 * phi));
        r.clock_form.push_back(std::norm(c1) + std::norm(c2));

        const cplx e = std::polar(1.0, 2.0 * a) * (1.0 + std::polar(1.0, phi)) * 0.25;
        r.phasor_form.push_back(psi2 * (1.0 + e.real() * 2.0));

        r.level_form.push_back(psi2 * (std::pow(std::cos(a), 2) + std::pow(std::cos(a + 0.5 * phi), 2)));
    }
    for (std::size_t i = 0; i < setup.z.size(); ++i) {
        r.max_discrepancy = std::max({r.max_discrepancy, std::abs(r.clock_form[i] - r.level_form[i]),
                                      std::abs(r.clock_form[i] - r.phasor_form[i]),
                                      std::abs(r.phasor_form[i] - r.level_form[i])});
    }
    return r;
}

} // namespace clocksim

#pragma once

// Measurement side: synthetic absorption images, column integration,
// sine x Gaussian fringe fits, shot averaging and circular phase statistics.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "detection.hpp"
#include "least_squares.hpp"

namespace clocksim {

class GeometryMismatch : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class NyquistError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

inline double wrap_phase(double phi) {
    const double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(phi + std::numbers::pi, two_pi);
    if (w < 0.0) w += two_pi;
    w -= std::numbers::pi;
    if (w >= std::numbers::pi) w -= two_pi;
    return w;
}

// ---------------------------------------------------------------- images

/// Rows run along z, columns along x; row-major storage.
struct ShotImage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    double pixel = 0.0;    // m
    double origin_z = 0.0; // m, lab z of the center of row 0
    double origin_x = 0.0; // m, x of the center of column 0
    double frame_offset = 0.0; // m, lab position of the analysis frame (0 = lab)
    std::uint64_t seed = 0;
    bool noisy = false;
    std::vector<double> expected;
    std::vector<double> counts;

    double z(std::size_t i) const { return origin_z + static_cast<double>(i) * pixel; }
    double x(std::size_t j) const { return origin_x + static_cast<double>(j) * pixel; }
    double total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }
};

struct RenderSettings {
    double transverse_width = 20e-6; // m, rms of the Gaussian along x
    double atom_number = 1e4;
    double pixel = 2e-6;             // m
    double blur = 0.0;               // m, rms of the Gaussian point spread
    std::uint64_t seed = 0;
    bool noise = true;
    std::size_t cols = 0;            // 0: cover +-3 transverse widths
};

/// Uniform sample grid at pixel pitch covering [-half_extent, half_extent].
inline std::vector<double> pixel_grid(double half_extent, double pixel) {
    const auto half = static_cast<std::size_t>(std::ceil(half_extent / pixel));
    return centered_grid(2 * half + 1, pixel);
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma, double pixel) {
    const auto radius = static_cast<long>(std::ceil(4.0 * sigma / pixel));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    for (long i = -radius; i <= radius; ++i) {
        const double x = static_cast<double>(i) * pixel / sigma;
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * x * x);
    }
    const double s = std::accumulate(k.begin(), k.end(), 0.0);
    for (auto& v : k) v /= s;
    return k;
}

/// Separable blur with zero padding.
inline void blur_image(std::vector<double>& img, std::size_t rows, std::size_t cols,
                       const std::vector<double>& kernel) {
    const long r = static_cast<long>(kernel.size() / 2);
    std::vector<double> tmp(img.size(), 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (long q = -r; q <= r; ++q) {
                const long ii = static_cast<long>(i) + q;
                if (ii < 0 || ii >= static_cast<long>(rows)) continue;
                s += kernel[static_cast<std::size_t>(q + r)] * img[static_cast<std::size_t>(ii) * cols + j];
            }
            tmp[i * cols + j] = s;
        }
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (long q = -r; q <= r; ++q) {
                const long jj = static_cast<long>(j) + q;
                if (jj < 0 || jj >= static_cast<long>(cols)) continue;
                s += kernel[static_cast<std::size_t>(q + r)] * tmp[i * cols + static_cast<std::size_t>(jj)];
            }
            img[i * cols + j] = s;
        }
}

} // namespace detail

/// Expected counts N P(z_i) pixel g_j with g the discretely normalized
/// transverse Gaussian, optionally blurred, then Poisson-sampled. The profile
/// must be sampled at pixel centers (spacing == pixel).
inline ShotImage render_image(const FringeProfile& profile, const RenderSettings& s) {
    if (!(s.atom_number > 0.0)) throw InvalidParameter("render_image: atom_number must be > 0");
    if (!(s.pixel > 0.0)) throw InvalidParameter("render_image: pixel must be > 0");
    if (!(s.transverse_width > 0.0)) throw InvalidParameter("render_image: transverse width must be > 0");
    if (!(s.blur >= 0.0)) throw InvalidParameter("render_image: blur must be >= 0");
    if (profile.z.size() < 2) throw InvalidParameter("render_image: profile needs >= 2 samples");
    if (std::abs(profile.spacing() - s.pixel) > 1e-9 * s.pixel)
        throw GeometryMismatch("render_image: profile spacing differs from the pixel size");
    if (profile.params && !(s.pixel < 0.25 * profile.params->lambda_t))
        throw NyquistError("render_image: pixel must be below lambda_t / 4");

    ShotImage img;
    img.rows = profile.z.size();
    img.cols = s.cols ? s.cols : 2 * static_cast<std::size_t>(std::ceil(3.0 * s.transverse_width / s.pixel)) + 1;
    img.pixel = s.pixel;
    img.origin_z = profile.lab_offset + profile.z.front();
    img.origin_x = -0.5 * static_cast<double>(img.cols - 1) * s.pixel;
    img.frame_offset = profile.lab_offset;
    img.seed = s.seed;
    img.noisy = s.noise;

    std::vector<double> g(img.cols);
    for (std::size_t j = 0; j < img.cols; ++j) {
        const double x = img.x(j) / s.transverse_width;
        g[j] = std::exp(-0.5 * x * x);
    }
    const double gs = std::accumulate(g.begin(), g.end(), 0.0);
    for (auto& v : g) v /= gs;

    img.expected.resize(img.rows * img.cols);
    for (std::size_t i = 0; i < img.rows; ++i) {
        const double row = s.atom_number * std::max(profile.density[i], 0.0) * s.pixel;
        for (std::size_t j = 0; j < img.cols; ++j) img.expected[i * img.cols + j] = row * g[j];
    }
    if (s.blur > 1e-3 * s.pixel) detail::blur_image(img.expected, img.rows, img.cols, detail::gaussian_kernel(s.blur, s.pixel));

    if (s.noise) {
        std::mt19937_64 rng(s.seed);
        img.counts.resize(img.expected.size());
        for (std::size_t p = 0; p < img.expected.size(); ++p) {
            const double mu = img.expected[p];
            img.counts[p] = mu > 0.0 ? static_cast<double>(std::poisson_distribution<long>(mu)(rng)) : 0.0;
        }
    } else {
        img.counts = img.expected;
    }
    return img;
}

/// Column sums along x; z is expressed in the image's analysis frame.
inline FringeProfile integrate_columns(const ShotImage& img, bool use_expected = false) {
    const auto& src = use_expected ? img.expected : img.counts;
    FringeProfile p;
    p.lab_offset = img.frame_offset;
    p.z.resize(img.rows);
    p.density.assign(img.rows, 0.0);
    for (std::size_t i = 0; i < img.rows; ++i) {
        p.z[i] = img.z(i) - img.frame_offset;
        for (std::size_t j = 0; j < img.cols; ++j) p.density[i] += src[i * img.cols + j];
    }
    return p;
}

/// Pixelwise mean of realized (and expected) counts.
inline ShotImage average_shots(const std::vector<ShotImage>& images) {
    if (images.empty()) throw InvalidParameter("average_shots: no images");
    const auto& a = images.front();
    ShotImage out = a;
    std::fill(out.counts.begin(), out.counts.end(), 0.0);
    std::fill(out.expected.begin(), out.expected.end(), 0.0);
    for (const auto& im : images) {
        if (im.rows != a.rows || im.cols != a.cols || im.pixel != a.pixel || im.origin_z != a.origin_z ||
            im.origin_x != a.origin_x)
            throw GeometryMismatch("average_shots: images differ in geometry");
        for (std::size_t p = 0; p < out.counts.size(); ++p) {
            out.counts[p] += im.counts[p];
            out.expected[p] += im.expected[p];
        }
    }
    const double inv = 1.0 / static_cast<double>(images.size());
    for (auto& v : out.counts) v *= inv;
    for (auto& v : out.expected) v *= inv;
    return out;
}

// ---------------------------------------------------------------- fits

struct FitResult {
    double amplitude = 0.0;
    double center = 0.0; // m
    double width = 0.0;  // m, envelope exp(-(z-z0)^2 / 2 w^2)
    double period = 0.0; // m
    double phase = 0.0;  // rad, model cos(2 pi z / period + phase), in [-pi, pi)
    double visibility = 0.0;
    double offset = 0.0;
    double residual_rms = 0.0;
    bool converged = false;
    int iterations = 0;
};

inline nlohmann::json to_json(const FitResult& f) {
    return {{"amplitude", f.amplitude},
            {"center_um", units::to_um(f.center)},
            {"width_um", units::to_um(f.width)},
            {"period_um", units::to_um(f.period)},
            {"phase_rad", f.phase},
            {"visibility", f.visibility},
            {"offset", f.offset},
            {"residual_rms", f.residual_rms},
            {"converged", f.converged},
            {"iterations", f.iterations}};
}

namespace detail {

struct SpectralGuess {
    double k = 0.0;   // per sample
    cplx f{0.0, 0.0}; // sum r_i exp(-i k u_i)
    double median = 0.0;
};

/// sum r_i exp(-i k u_i); unit steps in u reuse a rotating phasor, which is
/// re-anchored every 64 samples to keep rounding drift negligible.
inline cplx dft_at(const std::vector<double>& u, const std::vector<double>& r, double k) {
    cplx s{0.0, 0.0};
    if (u.empty()) return s;
    const cplx step = std::polar(1.0, -k);
    cplx ph = std::polar(1.0, -k * u[0]);
    s += r[0] * ph;
    for (std::size_t i = 1; i < u.size(); ++i) {
        ph = (u[i] - u[i - 1] == 1.0 && i % 64 != 0) ? ph * step : std::polar(1.0, -k * u[i]);
        s += r[i] * ph;
    }
    return s;
}

/// Dense scan of |DFT| over k in [k_min, pi] (u in sample units), refined by
/// golden-section search around the best grid point.
inline SpectralGuess spectral_peak(const std::vector<double>& u, const std::vector<double>& r, double k_min,
                                   double k_max = std::numbers::pi) {
    SpectralGuess g;
    const double n = static_cast<double>(u.size());
    const double dk = 2.0 * std::numbers::pi / n / 8.0;
    std::vector<double> mags;
    double best = -1.0;
    for (double k = k_min; k <= k_max; k += dk) {
        const double m = std::abs(dft_at(u, r, k));
        mags.push_back(m);
        if (m > best) {
            best = m;
            g.k = k;
        }
    }
    if (mags.empty()) return g;
    std::nth_element(mags.begin(), mags.begin() + static_cast<long>(mags.size() / 2), mags.end());
    g.median = mags[mags.size() / 2];

    double a = std::max(k_min, g.k - dk), b = std::min(k_max, g.k + dk);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = std::abs(dft_at(u, r, c)), fd = std::abs(dft_at(u, r, d));
    for (int it = 0; it < 40; ++it) {
        if (fc > fd) {
            b = d; d = c; fd = fc;
            c = b - phi * (b - a);
            fc = std::abs(dft_at(u, r, c));
        } else {
            a = c; c = d; fc = fd;
            d = a + phi * (b - a);
            fd = std::abs(dft_at(u, r, d));
        }
    }
    const double kr = 0.5 * (a + b);
    if (std::abs(dft_at(u, r, kr)) > best) g.k = kr;
    g.f = dft_at(u, r, g.k);
    return g;
}

} // namespace detail

struct FitOptions {
    LmOptions lm{};
    double significance = 3.0; // spectral peak over median |DFT|
};

/// Least-squares fit of A exp(-(z-z0)^2 / 2w^2) [1 + V cos(2 pi z / l + phi)] + C.
/// Initial guesses come from envelope moments and the dominant spectral peak
/// of the envelope-subtracted profile. Without a significant peak the
/// envelope alone is fitted and V = 0 is returned with converged = false.
inline FitResult fit_fringes(const FringeProfile& profile, const FitOptions& opt = {}) {
    const std::size_t n = profile.z.size();
    if (n < 16 || profile.density.size() != n) throw InvalidParameter("fit_fringes: need >= 16 samples");
    const double dz = profile.spacing();
    if (!(dz > 0.0)) throw InvalidParameter("fit_fringes: z must increase");

    const double ymax = *std::max_element(profile.density.begin(), profile.density.end());
    if (!(ymax > 0.0)) {
        FitResult f;
        return f;
    }
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = profile.density[i] / ymax;

    // moments in sample units
    const std::size_t edge = std::max<std::size_t>(1, n / 20);
    double c0 = 0.0;
    for (std::size_t i = 0; i < edge; ++i) c0 += y[i] + y[n - 1 - i];
    c0 /= static_cast<double>(2 * edge);
    double s0 = 0.0, s1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::max(y[i] - c0, 0.0);
        s0 += p;
        s1 += p * static_cast<double>(i);
    }
    const double ref = s0 > 0.0 ? s1 / s0 : 0.5 * static_cast<double>(n - 1);
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) s2 += std::max(y[i] - c0, 0.0) * std::pow(static_cast<double>(i) - ref, 2);
    const double w0 = s0 > 0.0 ? std::max(std::sqrt(s2 / s0), 1.0) : 0.25 * static_cast<double>(n);
    const double a0 = s0 / (std::sqrt(2.0 * std::numbers::pi) * w0);

    std::vector<double> u(n), r(n);
    double env_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        u[i] = static_cast<double>(i) - ref;
        const double e = a0 * std::exp(-0.5 * u[i] * u[i] / (w0 * w0));
        r[i] = y[i] - c0 - e;
        env_sum += e;
    }
    const auto sg = detail::spectral_peak(u, r, std::min(2.5 / w0, 0.5));
    const double v0 = env_sum > 0.0 ? 2.0 * std::abs(sg.f) / env_sum : 0.0;
    const bool significant = std::abs(sg.f) > opt.significance * sg.median && v0 > 1e-6;

    const double z_ref = profile.z.front() + ref * dz;
    FitResult out;
    out.period = sg.k > 0.0 ? 2.0 * std::numbers::pi / sg.k * dz : 0.0;

    if (!significant) {
        // envelope-only fit: (A, zc, w, C)
        LmModel model = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res, Eigen::MatrixXd& J) {
            res.resize(static_cast<Eigen::Index>(n));
            J.resize(static_cast<Eigen::Index>(n), 4);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = u[i] - x[1];
                const double e = std::exp(-0.5 * d * d / (x[2] * x[2]));
                const auto k = static_cast<Eigen::Index>(i);
                res[k] = x[0] * e + x[3] - y[i];
                J(k, 0) = e;
                J(k, 1) = x[0] * e * d / (x[2] * x[2]);
                J(k, 2) = x[0] * e * d * d / (x[2] * x[2] * x[2]);
                J(k, 3) = 1.0;
            }
        };
        Eigen::VectorXd x0(4);
        x0 << a0, 0.0, w0, c0;
        const auto lm = levenberg_marquardt(model, x0, opt.lm);
        out.amplitude = lm.params[0] * ymax;
        out.center = z_ref + lm.params[1] * dz;
        out.width = std::abs(lm.params[2]) * dz;
        out.offset = lm.params[3] * ymax;
        out.residual_rms = std::sqrt(2.0 * lm.cost / static_cast<double>(n)) * ymax;
        out.iterations = lm.iterations;
        out.visibility = 0.0;
        out.phase = 0.0;
        out.converged = false;
        return out;
    }

    // full model: (A, zc, w, C, V, K, phi), u in samples
    LmModel model = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res, Eigen::MatrixXd& J) {
        res.resize(static_cast<Eigen::Index>(n));
        J.resize(static_cast<Eigen::Index>(n), 7);
        const double A = x[0], zc = x[1], w = x[2], C = x[3], V = x[4], K = x[5], ph = x[6];
        for (std::size_t i = 0; i < n; ++i) {
            const double d = u[i] - zc;
            const double e = std::exp(-0.5 * d * d / (w * w));
            const double c = std::cos(K * u[i] + ph);
            const double s = std::sin(K * u[i] + ph);
            const double mod = 1.0 + V * c;
            const auto k = static_cast<Eigen::Index>(i);
            res[k] = A * e * mod + C - y[i];
            J(k, 0) = e * mod;
            J(k, 1) = A * e * mod * d / (w * w);
            J(k, 2) = A * e * mod * d * d / (w * w * w);
            J(k, 3) = 1.0;
            J(k, 4) = A * e * c;
            J(k, 5) = -A * e * V * s * u[i];
            J(k, 6) = -A * e * V * s;
        }
    };
    Eigen::VectorXd x0(7);
    x0 << a0, 0.0, w0, c0, std::min(v0, 1.0), sg.k, std::arg(sg.f);
    const auto lm = levenberg_marquardt(model, x0, opt.lm);
    const auto& p = lm.params;

    double V = p[4];
    double ph = p[6];
    double K = p[5];
    if (K < 0.0) {
        K = -K;
        ph = -ph;
    }
    if (V < 0.0) {
        V = -V;
        ph += std::numbers::pi;
    }
    const double k_phys = K / dz;
    out.amplitude = p[0] * ymax;
    out.center = z_ref + p[1] * dz;
    out.width = std::abs(p[2]) * dz;
    out.offset = p[3] * ymax;
    out.visibility = std::min(V, 1.0);
    out.period = 2.0 * std::numbers::pi / k_phys;
    // cos(K u + ph) with u = (z - z_ref) / dz
    out.phase = wrap_phase(ph - k_phys * z_ref);
    out.residual_rms = std::sqrt(2.0 * lm.cost / static_cast<double>(n)) * ymax;
    out.iterations = lm.iterations;
    out.converged = lm.converged && lm.params.allFinite() && out.period > 2.0 * dz;
    return out;
}

struct LocalFit {
    double visibility = 0.0; // at the window center
    double phase = 0.0;      // cos(2 pi (z - center) / period + phase)
    double period = 0.0;
    bool converged = false;
};

/// Fringe fit restricted to |z - center| <= half_window with a log-quadratic
/// envelope and a visibility linear in z:
///   exp(c0 + c1 u + c2 u^2) [1 + (V + V1 u) cos(K u + phi)],
/// residuals taken relative to the envelope. Measures the local visibility
/// at `center` rather than an envelope-weighted average.
inline LocalFit fit_local(const FringeProfile& profile, double center, double half_window, double period_guess) {
    const double dz = profile.spacing();
    if (!(dz > 0.0) || !(half_window > 0.0) || !(period_guess > 2.0 * dz))
        throw InvalidParameter("fit_local: invalid window or period guess");
    std::vector<double> u, y;
    for (std::size_t i = 0; i < profile.z.size(); ++i) {
        if (std::abs(profile.z[i] - center) > half_window) continue;
        if (!(profile.density[i] > 0.0)) continue;
        u.push_back((profile.z[i] - center) / dz);
        y.push_back(profile.density[i]);
    }
    const std::size_t n = u.size();
    if (n < 12) throw InvalidParameter("fit_local: window holds fewer than 12 samples");
    const double ymax = *std::max_element(y.begin(), y.end());
    for (auto& v : y) v /= ymax;

    // quadratic least squares on log y for the envelope
    Eigen::MatrixXd Q(static_cast<Eigen::Index>(n), 3);
    Eigen::VectorXd ly(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        Q(k, 0) = 1.0;
        Q(k, 1) = u[i];
        Q(k, 2) = u[i] * u[i];
        ly[k] = std::log(y[i]);
    }
    const Eigen::Vector3d c = Q.colPivHouseholderQr().solve(ly);
    std::vector<double> rel(n);
    for (std::size_t i = 0; i < n; ++i) rel[i] = y[i] / std::exp(c[0] + c[1] * u[i] + c[2] * u[i] * u[i]) - 1.0;
    const double k_guess = 2.0 * std::numbers::pi * dz / period_guess;
    const auto sg = detail::spectral_peak(u, rel, 0.8 * k_guess, std::min(1.2 * k_guess, std::numbers::pi));

    LmModel model = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res, Eigen::MatrixXd& J) {
        res.resize(static_cast<Eigen::Index>(n));
        J.resize(static_cast<Eigen::Index>(n), 7);
        for (std::size_t i = 0; i < n; ++i) {
            const double uu = u[i];
            const double e = std::exp(x[0] + x[1] * uu + x[2] * uu * uu);
            const double arg = x[5] * uu + x[6];
            const double co = std::cos(arg), si = std::sin(arg);
            const double v = x[3] + x[4] * uu;
            const double q = y[i] / e;
            const auto k = static_cast<Eigen::Index>(i);
            res[k] = 1.0 + v * co - q;
            J(k, 0) = q;
            J(k, 1) = q * uu;
            J(k, 2) = q * uu * uu;
            J(k, 3) = co;
            J(k, 4) = uu * co;
            J(k, 5) = -v * si * uu;
            J(k, 6) = -v * si;
        }
    };
    Eigen::VectorXd x0(7);
    x0 << c[0], c[1], c[2], 2.0 * std::abs(sg.f) / static_cast<double>(n), 0.0, sg.k, std::arg(sg.f);
    const auto lm = levenberg_marquardt(model, x0);

    LocalFit f;
    double V = lm.params[3], ph = lm.params[6], K = lm.params[5];
    if (K < 0.0) {
        K = -K;
        ph = -ph;
        // V unchanged: cos is even
    }
    if (V < 0.0) {
        V = -V;
        ph += std::numbers::pi;
    }
    f.visibility = V;
    f.phase = wrap_phase(ph);
    f.period = 2.0 * std::numbers::pi * dz / K;
    f.converged = lm.converged;
    return f;
}

// ---------------------------------------------------------------- statistics

struct PhaseStats {
    std::optional<double> mean; // undefined when R vanishes
    double sigma = 0.0;         // sqrt(-2 ln R)
    double resultant = 0.0;     // R
    std::size_t count = 0;
};

inline PhaseStats circular_stats(const std::vector<double>& phases) {
    if (phases.size() < 2) throw InvalidParameter("circular_stats: need >= 2 samples");
    cplx s{0.0, 0.0};
    for (double p : phases) s += std::polar(1.0, p);
    s /= static_cast<double>(phases.size());
    PhaseStats st;
    st.count = phases.size();
    st.resultant = std::min(std::abs(s), 1.0);
    if (st.resultant < 1e-12) {
        st.resultant = 0.0;
        st.sigma = std::numeric_limits<double>::infinity();
        return st;
    }
    st.mean = std::arg(s);
    st.sigma = std::sqrt(std::max(-2.0 * std::log(st.resultant), 0.0));
    return st;
}

struct CoherenceTest {
    double p_value = 1.0;       // exp(-n R^2)
    double p_monte_carlo = 1.0; // fraction of uniform samples with R >= observed, (k+1)/(M+1)
    double resultant = 0.0;
    std::size_t count = 0;
};

/// Rayleigh test against uniformly distributed phases.
inline CoherenceTest coherence_test(const std::vector<double>& phases, std::size_t n_resamples,
                                    std::uint64_t seed = 1) {
    if (phases.size() < 10) throw InvalidParameter("coherence_test: need >= 10 samples");
    CoherenceTest t;
    t.count = phases.size();
    const double n = static_cast<double>(phases.size());
    t.resultant = circular_stats(phases).resultant;
    t.p_value = std::exp(-n * t.resultant * t.resultant);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-std::numbers::pi, std::numbers::pi);
    std::size_t hits = 0;
    for (std::size_t m = 0; m < n_resamples; ++m) {
        cplx s{0.0, 0.0};
        for (std::size_t i = 0; i < phases.size(); ++i) s += std::polar(1.0, uni(rng));
        if (std::abs(s) / n >= t.resultant) ++hits;
    }
    t.p_monte_carlo = static_cast<double>(hits + 1) / static_cast<double>(n_resamples + 1);
    return t;
}

inline std::vector<double> wrapped_gaussian(std::size_t n, double mean, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(mean, sigma);
    std::vector<double> out(n);
    for (auto& v : out) v = wrap_phase(nd(rng));
    return out;
}

/// Counts per 0.1 rad bin over [-pi, pi); the last bin is narrower.
inline std::vector<std::size_t> phase_histogram(const std::vector<double>& phases, double bin = 0.1) {
    const auto nb = static_cast<std::size_t>(std::ceil(2.0 * std::numbers::pi / bin));
    std::vector<std::size_t> h(nb, 0);
    for (double p : phases) {
        auto i = static_cast<std::size_t>(std::floor((wrap_phase(p) + std::numbers::pi) / bin));
        h[std::min(i, nb - 1)]++;
    }
    return h;
}

// ---------------------------------------------------------------- image I/O
//
// Both formats start with one text line "rows cols pixel_um origin_z_um origin_x_um".
// CSV: then one line of comma-separated counts per row.
// Binary: then rows * cols little-endian float64 counts, row-major.

inline std::string image_header(const ShotImage& img) {
    std::ostringstream os;
    os.precision(17);
    os << img.rows << ' ' << img.cols << ' ' << units::to_um(img.pixel) << ' ' << units::to_um(img.origin_z) << ' '
       << units::to_um(img.origin_x) << '\n';
    return os.str();
}

inline void write_image_csv(std::ostream& os, const ShotImage& img) {
    os << image_header(img);
    os.precision(17);
    for (std::size_t i = 0; i < img.rows; ++i) {
        for (std::size_t j = 0; j < img.cols; ++j) {
            if (j) os << ',';
            os << img.counts[i * img.cols + j];
        }
        os << '\n';
    }
}

inline void write_image_binary(std::ostream& os, const ShotImage& img) {
    os << image_header(img);
    for (double v : img.counts) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xffu);
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

namespace detail {
inline ShotImage parse_image_header(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidParameter("image: missing header");
    std::istringstream hs(line);
    ShotImage img;
    double pix = 0, oz = 0, ox = 0;
    if (!(hs >> img.rows >> img.cols >> pix >> oz >> ox)) throw InvalidParameter("image: malformed header");
    img.pixel = units::from_um(pix);
    img.origin_z = units::from_um(oz);
    img.origin_x = units::from_um(ox);
    return img;
}
} // namespace detail

inline ShotImage read_image_csv(std::istream& is) {
    ShotImage img = detail::parse_image_header(is);
    img.counts.reserve(img.rows * img.cols);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) img.counts.push_back(std::stod(cell));
    }
    if (img.counts.size() != img.rows * img.cols) throw InvalidParameter("image: pixel count mismatch");
    img.expected = img.counts;
    return img;
}

inline ShotImage read_image_binary(std::istream& is) {
    ShotImage img = detail::parse_image_header(is);
    img.counts.resize(img.rows * img.cols);
    for (auto& v : img.counts) {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8)) throw InvalidParameter("image: truncated binary data");
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
        v = std::bit_cast<double>(bits);
    }
    img.expected = img.counts;
    return img;
}

} // namespace clocksim

#pragma once

// Full sequence (split, clock init, gradient, free flight, detection) and the
// parameter sweeps built on it, plus the two-stage clock-model fit.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "chip_field.hpp"
#include "core.hpp"
#include "detection.hpp"
#include "fringe_analysis.hpp"
#include "least_squares.hpp"
#include "spinor_dynamics.hpp"

namespace clocksim {

class FitError : public Error {
public:
    using Error::Error;
};

struct ImagingConfig {
    double pixel = 2e-6;
    double blur = 0.0;
    double atom_number = 1e4;
    double transverse_width = 20e-6;
    bool noise = true;
    double half_extent_sigmas = 4.0; // profile spans +- this many sigma_t around the center of mass
};

/// Differential clock rate the default separation is calibrated to (rad/s).
inline constexpr double kCalibratedDeltaOmega = 0.166e6;

struct SequenceConfig {
    double separation = GradientPreset{}.calibrated_separation(kCalibratedDeltaOmega);
    double sigma0 = 0.05e-6;
    std::optional<double> waist_time; // s since release; default: gradient start

    double split_time = 1.0e-3;
    double init_time = 1.5e-3;
    RfPulse clock_pulse{std::numbers::pi / (2.0 * 10e-6), 10e-6, 0.0, 0.0};

    GradientPreset gradient_preset{};
    double gradient_scale = 1.0;
    std::optional<double> gradient_override; // T/m, replaces the preset
    double tg = 0.0;
    double gradient_gap = 8e-6;
    std::optional<double> gradient_start; // s since release

    double phi0 = 0.0;
    double alpha0 = 0.0;
    double overlap_amplitude = 1.0; // a
    double overlap_tau = 0.0;       // tau_1, s; <= 0 disables the decay
    double tg_jitter = 0.0;         // full width of the uniform T_G error, s

    BiasField bias{36.7e-4, 0.0};
    double bias_duration = 0.0;

    double tof = 8e-3; // imaging time since release
    ImagingConfig imaging{};
    std::uint64_t seed = 1;
    std::size_t shots_per_point = 5;

    double gradient() const {
        return gradient_override ? *gradient_override : gradient_preset.gradient() * gradient_scale;
    }
    double gradient_start_time() const {
        return gradient_start ? *gradient_start : init_time + clock_pulse.duration + gradient_gap;
    }
    double waist() const { return waist_time ? *waist_time : gradient_start_time(); }

    /// Clock rotation rate between the packets during the gradient (rad/s).
    double delta_omega() const {
        return kConst.mu_bohr / (2.0 * kConst.hbar) * gradient() * separation;
    }
    double bias_rotation() const {
        return kConst.mu_bohr / (2.0 * kConst.hbar) * bias.gradient * separation * bias_duration;
    }

    void validate() const {
        auto req = [](bool ok, const char* msg) {
            if (!ok) throw InvalidParameter(msg);
        };
        req(separation > 0.0, "sequence.separation_um must be > 0");
        req(sigma0 > 0.0, "sequence.sigma0_um must be > 0");
        req(tg >= 0.0, "gradient.tg_us must be >= 0");
        req(clock_pulse.duration >= 0.0, "clock.duration_us must be >= 0");
        req(clock_pulse.rabi_frequency >= 0.0, "clock.rabi_frequency_rad_per_us must be >= 0");
        req(tg_jitter >= 0.0, "residual.tg_jitter_us must be >= 0");
        req(bias_duration >= 0.0, "bias.duration_us must be >= 0");
        req(tof > 0.0, "sequence.tof_us must be > 0");
        req(init_time >= split_time, "sequence.init_time_us must be >= split_time_us");
        req(overlap_amplitude > 0.0 && overlap_amplitude <= 1.0, "residual.overlap_amplitude must lie in (0, 1]");
        req(imaging.atom_number > 0.0, "imaging.atom_number must be > 0");
        req(imaging.pixel > 0.0, "imaging.pixel_um must be > 0");
        req(imaging.blur >= 0.0, "imaging.blur_um must be >= 0");
        req(imaging.transverse_width > 0.0, "imaging.transverse_width_um must be > 0");
    }
};

/// Independent per-shot seed from (master, point, shot), stable under any scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t point, std::uint64_t shot) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(point), static_cast<std::uint32_t>(point >> 32),
                      static_cast<std::uint32_t>(shot), static_cast<std::uint32_t>(shot >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Runs f(0..n-1) on a small worker pool; results land at their own index so
/// the output does not depend on scheduling. The first failure (lowest
/// index) is rethrown.
template <class F>
auto parallel_map(std::size_t n, F&& f, unsigned threads = 0) -> std::vector<decltype(f(std::size_t{}))> {
    using R = decltype(f(std::size_t{}));
    std::vector<std::optional<R>> slots(n);
    std::vector<std::exception_ptr> errors(n);
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                slots[i].emplace(f(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<R> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

struct ShotOutput {
    SpinorState final_state;
    FringeProfile profile;
    ShotImage image;
    FitResult fit;
    double tg_effective = 0.0; // s, after jitter
    double rotation = 0.0;     // total relative clock rotation, rad
    double overlap_factor = 1.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline void shift_upper_lower(SpinorState& s, Level level, double half_phase) {
    double mean = 0.0;
    int n = 0;
    for (const auto& t : s.terms)
        if (t.level == level) {
            mean += t.center;
            ++n;
        }
    if (n == 0) return;
    mean /= n;
    for (auto& t : s.terms)
        if (t.level == level) t.phase += t.center > mean ? half_phase : -half_phase;
}

} // namespace detail

/// One full shot. `seed` drives T_G jitter and image noise.
inline ShotOutput run_shot(const SequenceConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ShotOutput out;
    out.seed = seed;

    const double t0 = cfg.waist();
    SpinorState s = make_split_state(cfg.separation, alpha_from_waist(cfg.sigma0, t0, cfg.split_time), Level::two,
                                     cfg.split_time);
    s = free_flight(s, cfg.init_time - cfg.split_time);
    // pulse applied at its midpoint, packets keep flying meanwhile
    s = free_flight(s, 0.5 * cfg.clock_pulse.duration);
    s = apply_rf(s, cfg.clock_pulse);
    s = free_flight(s, 0.5 * cfg.clock_pulse.duration);

    const double tg_start = cfg.gradient_start_time();
    if (tg_start < s.time - 1e-15)
        throw InvalidParameter("gradient.start_us must not precede the end of the clock pulse");
    s = free_flight(s, std::max(tg_start - s.time, 0.0));

    double tg = cfg.tg;
    if (cfg.tg_jitter > 0.0) {
        std::uniform_real_distribution<double> jit(-0.5 * cfg.tg_jitter, 0.5 * cfg.tg_jitter);
        tg = std::max(tg + jit(rng), 0.0);
    }
    out.tg_effective = tg;
    const GradientImpulse impulse{cfg.gradient(), tg};
    s = free_flight(s, 0.5 * tg);
    s = apply_gradient(s, impulse);
    const double t_kick = s.time;
    s = free_flight(s, 0.5 * tg);

    if (cfg.phi0 != 0.0) detail::shift_upper_lower(s, Level::two, 0.5 * cfg.phi0);

    const double t_flight = cfg.tof - t_kick;
    if (!(t_flight > 0.0)) throw InvalidParameter("sequence.tof_us must come after the gradient");
    const double sigma_t = fringe_parameters(cfg.separation, 1.0, t_flight, t0 - t_kick, cfg.sigma0).sigma_t;
    if (cfg.alpha0 != 0.0)
        s = apply_centered_kick(s, Level::two, cfg.alpha0 * sigma_t / (hbar_over_m * t_flight));

    if (cfg.bias_duration > 0.0) {
        if (s.time + cfg.bias_duration > cfg.tof)
            throw InvalidParameter("bias.duration_us exceeds the remaining time of flight");
        s = free_flight(s, 0.5 * cfg.bias_duration);
        s = apply_gradient(s, GradientImpulse{cfg.bias.gradient, cfg.bias_duration});
        s = free_flight(s, 0.5 * cfg.bias_duration);
    }
    s = free_flight(s, cfg.tof - s.time);
    out.final_state = s;
    out.rotation = cfg.delta_omega() * tg + cfg.phi0 + cfg.bias_rotation();

    // center of mass and extent
    double wsum = 0.0, cm = 0.0, max_width = 0.0;
    for (const auto& t : s.terms) {
        const double w = std::norm(t.coefficient());
        wsum += w;
        cm += w * t.center;
        max_width = std::max(max_width, std::sqrt(2.0) * t.width());
    }
    cm /= wsum;
    double spread = 0.0;
    for (const auto& t : s.terms) spread = std::max(spread, std::abs(t.center - cm));

    out.overlap_factor = cfg.overlap_tau > 0.0 ? cfg.overlap_amplitude * std::exp(-tg / cfg.overlap_tau)
                                               : cfg.overlap_amplitude;
    const double f = out.overlap_factor;

    FringeProfile prof;
    prof.z = pixel_grid(cfg.imaging.half_extent_sigmas * max_width + spread, cfg.imaging.pixel);
    prof.lab_offset = cm;
    prof.density.reserve(prof.z.size());
    for (double z : prof.z) {
        const double coh = s.density_at(cm + z);
        prof.density.push_back(f < 1.0 ? f * coh + (1.0 - f) * s.incoherent_density_at(cm + z) : coh);
    }
    prof.params = fringe_parameters(cfg.separation, impulse.wavenumber(), t_flight, t0 - t_kick, cfg.sigma0);
    out.profile = prof;

    RenderSettings rs;
    rs.pixel = cfg.imaging.pixel;
    rs.blur = cfg.imaging.blur;
    rs.atom_number = cfg.imaging.atom_number;
    rs.transverse_width = cfg.imaging.transverse_width;
    rs.noise = cfg.imaging.noise;
    rs.seed = rng();
    out.image = render_image(prof, rs);
    out.fit = fit_fringes(integrate_columns(out.image));
    return out;
}

// ---------------------------------------------------------------- sweeps

struct SweepPoint {
    double value = 0.0; // SI
    std::vector<FitResult> shots;
    double mean_visibility = 0.0;
    double variance = 0.0; // sample variance of the single-shot visibilities
    std::size_t n = 0;
};

struct SweepResult {
    std::string parameter; // "tg", "tr", "bias_duration"
    std::string label;
    bool clock_on = true;
    std::vector<SweepPoint> points;

    std::vector<double> values() const {
        std::vector<double> v;
        for (const auto& p : points) v.push_back(p.value);
        return v;
    }
    std::vector<double> means() const {
        std::vector<double> v;
        for (const auto& p : points) v.push_back(p.mean_visibility);
        return v;
    }
};

namespace detail {

inline SweepPoint summarize(double value, std::vector<FitResult> shots) {
    SweepPoint p;
    p.value = value;
    p.n = shots.size();
    double m = 0.0;
    for (const auto& s : shots) m += s.visibility;
    m /= static_cast<double>(p.n);
    double v = 0.0;
    for (const auto& s : shots) v += (s.visibility - m) * (s.visibility - m);
    p.mean_visibility = m;
    p.variance = p.n > 1 ? v / static_cast<double>(p.n - 1) : 0.0;
    p.shots = std::move(shots);
    return p;
}

/// Runs shots for every (point, shot) with configurations from make(point).
template <class Make>
SweepResult run_sweep(const std::string& parameter, const std::vector<double>& values, std::size_t shots,
                      std::uint64_t master, Make&& make) {
    if (values.size() < 2) throw InvalidParameter("sweep: need >= 2 values");
    if (shots == 0) throw InvalidParameter("sweep: shots per point must be >= 1");
    const auto fits = parallel_map(values.size() * shots, [&](std::size_t idx) {
        const std::size_t p = idx / shots, j = idx % shots;
        return run_shot(make(p), derive_seed(master, p, j)).fit;
    });
    SweepResult r;
    r.parameter = parameter;
    for (std::size_t p = 0; p < values.size(); ++p) {
        std::vector<FitResult> f(fits.begin() + static_cast<long>(p * shots),
                                 fits.begin() + static_cast<long>((p + 1) * shots));
        r.points.push_back(summarize(values[p], std::move(f)));
    }
    return r;
}

} // namespace detail

/// Visibility vs gradient duration; clock_on = false removes the clock pulse.
inline SweepResult sweep_tg(const SequenceConfig& cfg, const std::vector<double>& tg_values,
                            std::size_t shots_per_point, bool clock_on) {
    auto r = detail::run_sweep("tg", tg_values, shots_per_point, cfg.seed + (clock_on ? 0 : 0x9e3779b9ULL),
                               [&](std::size_t p) {
                                   SequenceConfig c = cfg;
                                   c.tg = tg_values[p];
                                   if (!clock_on) c.clock_pulse.rabi_frequency = 0.0;
                                   return c;
                               });
    r.clock_on = clock_on;
    r.label = clock_on ? "clock" : "no_clock";
    return r;
}

/// Gradient duration giving a total relative rotation `target` (rad).
inline double calibrate_tg(const SequenceConfig& cfg, double target) {
    const double dw = cfg.delta_omega();
    if (!(dw > 0.0)) throw InvalidParameter("gradient: zero differential rate, cannot calibrate T_G");
    const double tg = (target - cfg.phi0 - cfg.bias_rotation()) / dw;
    if (tg < 0.0) throw InvalidParameter("gradient: rotation target below the residual rotation phi0");
    return tg;
}

/// Visibility vs clock-pulse duration at a fixed total rotation.
inline SweepResult sweep_tr(const SequenceConfig& cfg, const std::vector<double>& tr_values, double rotation_target) {
    SequenceConfig base = cfg;
    base.tg = calibrate_tg(cfg, rotation_target);
    if (!base.gradient_start) {
        double longest = 0.0;
        for (double v : tr_values) longest = std::max(longest, v);
        base.gradient_start = base.init_time + longest + base.gradient_gap;
    }
    auto r = detail::run_sweep("tr", tr_values, cfg.shots_per_point, cfg.seed, [&](std::size_t p) {
        SequenceConfig c = base;
        c.clock_pulse.duration = tr_values[p];
        return c;
    });
    std::ostringstream lab;
    lab << "rotation_" << rotation_target / std::numbers::pi << "pi";
    r.label = lab.str();
    return r;
}

inline SweepResult sweep_bias_duration(const SequenceConfig& cfg, const std::vector<double>& durations) {
    auto r = detail::run_sweep("bias_duration", durations, cfg.shots_per_point, cfg.seed, [&](std::size_t p) {
        SequenceConfig c = cfg;
        c.bias_duration = durations[p];
        return c;
    });
    r.label = "bias_duration";
    return r;
}

struct RabiCurve {
    std::vector<double> durations;   // s
    std::vector<double> population2; // |2>
    std::vector<double> population1;
    double period = 0.0; // s, fitted
};

/// Population after a single clock pulse on a pure |2> packet, and the
/// oscillation period from a sinusoid fit.
inline RabiCurve rabi_calibration(const SequenceConfig& cfg, const std::vector<double>& durations) {
    if (durations.size() < 4) throw InvalidParameter("rabi_calibration: need >= 4 durations");
    RabiCurve c;
    c.durations = durations;
    const auto s0 = make_split_state(0.0, alpha_from_waist(cfg.sigma0, cfg.waist(), cfg.init_time));
    for (double t : durations) {
        RfPulse p = cfg.clock_pulse;
        p.duration = t;
        const auto s = apply_rf(s0, p);
        c.population2.push_back(population(s, Level::two));
        c.population1.push_back(population(s, Level::one));
    }

    // work in microseconds
    std::vector<double> u, y;
    double mean = 0.0;
    for (std::size_t i = 0; i < durations.size(); ++i) {
        u.push_back(units::to_us(durations[i]));
        y.push_back(c.population2[i]);
        mean += c.population2[i];
    }
    mean /= static_cast<double>(y.size());
    double span = u.back() - u.front();
    if (!(span > 0.0)) throw InvalidParameter("rabi_calibration: durations must increase");
    std::vector<double> r(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) r[i] = y[i] - mean;
    const double du = span / static_cast<double>(u.size() - 1);
    const auto sg = detail::spectral_peak(u, r, 2.0 * std::numbers::pi / (4.0 * span), std::numbers::pi / du);

    const std::size_t n = u.size();
    LmModel model = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res, Eigen::MatrixXd& J) {
        res.resize(static_cast<Eigen::Index>(n));
        J.resize(static_cast<Eigen::Index>(n), 4);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = x[2] * u[i] + x[3];
            const auto k = static_cast<Eigen::Index>(i);
            res[k] = x[0] + x[1] * std::cos(a) - y[i];
            J(k, 0) = 1.0;
            J(k, 1) = std::cos(a);
            J(k, 2) = -x[1] * std::sin(a) * u[i];
            J(k, 3) = -x[1] * std::sin(a);
        }
    };
    Eigen::VectorXd x0(4);
    x0 << mean, 2.0 * std::abs(sg.f) / static_cast<double>(n), sg.k, -std::arg(sg.f);
    const auto lm = levenberg_marquardt(model, x0);
    c.period = units::from_us(2.0 * std::numbers::pi / std::abs(lm.params[2]));
    return c;
}

// ---------------------------------------------------------------- clock model

/// a e^{-T/tau1} sqrt(1 - sin^2[(phi0 + dw T)/2] / cosh^2(alpha0 + T/tau2)), lab units.
struct ClockModelFit {
    double a = 0.0;
    double tau1 = 0.0;        // us
    double phi0 = 0.0;        // rad
    double delta_omega = 0.0; // rad/us
    double alpha0 = 0.0;
    double tau2 = 0.0;        // us
    Eigen::Matrix2d cov_stage1 = Eigen::Matrix2d::Zero();     // (a, tau1)
    Eigen::Matrix4d cov_stage2 = Eigen::Matrix4d::Zero();     // (phi0, dw, alpha0, tau2)
    double stage1_rms = 0.0;
    double stage2_rms = 0.0;

    double operator()(double t_us) const { return evaluate(t_us); }
    double evaluate(double t_us) const {
        const double env = a * std::exp(-t_us / tau1);
        const double x = alpha0 + t_us / tau2;
        const double sh = std::sinh(x), ch = std::cosh(x);
        const double c = std::cos(0.5 * (phi0 + delta_omega * t_us));
        return env * std::sqrt(sh * sh + c * c) / ch;
    }
};

namespace detail {

/// sqrt(sinh^2 x + cos^2(theta/2)) / cosh x and its partial derivatives.
struct ContrastTerm {
    double g, dtheta, dx;
};

inline ContrastTerm contrast(double theta, double x) {
    const double sh = std::sinh(x), ch = std::cosh(x);
    const double c = std::cos(0.5 * theta), s = std::sin(0.5 * theta);
    const double S = std::max(std::sqrt(sh * sh + c * c), 1e-12);
    return {S / ch, -std::sin(theta) / (4.0 * S * ch), sh * s * s / (S * ch * ch)};
}

} // namespace detail

/// Two-stage fit: (a, tau1) from the no-clock sweep, then (phi0, dw, alpha0,
/// tau2) on the clock sweep with the envelope frozen.
inline ClockModelFit fit_clock_model(const SweepResult& clock, const SweepResult& noclock) {
    if (clock.points.size() < 5 || noclock.points.size() < 3)
        throw InvalidParameter("fit_clock_model: too few sweep points");
    ClockModelFit out;

    // stage 1: (a, r1 = 1/tau1), T in us
    std::vector<double> t1, v1;
    for (const auto& p : noclock.points) {
        t1.push_back(units::to_us(p.value));
        v1.push_back(p.mean_visibility);
    }
    {
        // log-linear start
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int m = 0;
        for (std::size_t i = 0; i < t1.size(); ++i) {
            if (!(v1[i] > 0.0)) continue;
            sx += t1[i];
            sy += std::log(v1[i]);
            sxx += t1[i] * t1[i];
            sxy += t1[i] * std::log(v1[i]);
            ++m;
        }
        const double den = m * sxx - sx * sx;
        const double slope = den != 0.0 ? (m * sxy - sx * sy) / den : 0.0;
        const double icpt = m ? (sy - slope * sx) / m : 0.0;
        Eigen::VectorXd x0(2);
        x0 << std::exp(icpt), -slope;
        const std::size_t n = t1.size();
        LmModel model = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
            r.resize(static_cast<Eigen::Index>(n));
            J.resize(static_cast<Eigen::Index>(n), 2);
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(-x[1] * t1[i]);
                const auto k = static_cast<Eigen::Index>(i);
                r[k] = x[0] * e - v1[i];
                J(k, 0) = e;
                J(k, 1) = -x[0] * t1[i] * e;
            }
        };
        const auto lm = levenberg_marquardt(model, x0);
        if (!lm.converged || !(lm.params[0] > 0.0) || !(lm.params[1] > 0.0))
            throw FitError("fit_clock_model: stage 1 (a, tau1) did not converge to a decaying envelope");
        out.a = lm.params[0];
        out.tau1 = 1.0 / lm.params[1];
        const Eigen::MatrixXd cov = lm.covariance();
        // delta method for tau1 = 1 / r1
        Eigen::Matrix2d jac;
        jac << 1.0, 0.0, 0.0, -out.tau1 * out.tau1;
        out.cov_stage1 = jac * cov * jac.transpose();
        out.stage1_rms = std::sqrt(2.0 * lm.cost / static_cast<double>(n));
    }

    // stage 2: (phi0, dw, alpha0, r2)
    std::vector<double> t2, v2, env;
    for (const auto& p : clock.points) {
        const double t = units::to_us(p.value);
        t2.push_back(t);
        v2.push_back(p.mean_visibility);
        env.push_back(out.a * std::exp(-t / out.tau1));
    }
    const std::size_t n = t2.size();
    auto cost_at = [&](double phi0, double dw, double a0, double r2) {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = env[i] * detail::contrast(phi0 + dw * t2[i], a0 + r2 * t2[i]).g - v2[i];
            c += d * d;
        }
        return c;
    };
    // coarse (phi0, dw) scan, repeated for a few breakup settings since a
    // large floor can move the best rate into the wrong basin
    struct Seed {
        double phi, dw, a0, r2;
    };
    std::vector<Seed> seeds;
    for (auto [a0, r2] : {std::pair{0.1, 0.0}, {0.3, 0.0}, {0.1, 0.01}, {0.3, 0.01}}) {
        double best = std::numeric_limits<double>::infinity();
        Seed sd{0.0, 0.1, a0, r2};
        for (double dw = 0.02; dw <= 0.5; dw += 0.001)
            for (int j = 0; j < 64; ++j) {
                const double phi = 2.0 * std::numbers::pi * j / 64.0;
                const double c = cost_at(phi, dw, a0, r2);
                if (c < best) {
                    best = c;
                    sd.phi = phi;
                    sd.dw = dw;
                }
            }
        seeds.push_back(sd);
    }

    LmModel model = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
        r.resize(static_cast<Eigen::Index>(n));
        J.resize(static_cast<Eigen::Index>(n), 4);
        for (std::size_t i = 0; i < n; ++i) {
            const auto ct = detail::contrast(x[0] + x[1] * t2[i], x[2] + x[3] * t2[i]);
            const auto k = static_cast<Eigen::Index>(i);
            r[k] = env[i] * ct.g - v2[i];
            J(k, 0) = env[i] * ct.dtheta;
            J(k, 1) = env[i] * ct.dtheta * t2[i];
            J(k, 2) = env[i] * ct.dx;
            J(k, 3) = env[i] * ct.dx * t2[i];
        }
    };
    // a few damped starts for the breakup pair, keep the best
    LmResult lm;
    double lm_cost = std::numeric_limits<double>::infinity();
    for (const auto& sd : seeds)
        for (double a0 : {0.05, 0.2, 0.5})
            for (double r2 : {0.002, 0.01, 0.05}) {
                Eigen::VectorXd x0(4);
                x0 << sd.phi, sd.dw, a0, r2;
                auto trial = levenberg_marquardt(model, x0);
                if (trial.params.allFinite() && trial.cost < lm_cost) {
                    lm_cost = trial.cost;
                    lm = trial;
                }
            }
    if (!std::isfinite(lm_cost)) throw FitError("fit_clock_model: stage 2 failed");

    double phi0 = lm.params[0], dw = lm.params[1], a0 = lm.params[2], r2 = lm.params[3];
    Eigen::Vector4d sign(1.0, 1.0, 1.0, 1.0);
    if (dw < 0.0) {
        dw = -dw;
        phi0 = -phi0;
        sign[0] = sign[1] = -1.0;
    }
    if (r2 < 0.0) {
        r2 = -r2;
        a0 = -a0;
        sign[2] = sign[3] = -1.0;
    }
    out.phi0 = wrap_phase(phi0);
    out.delta_omega = dw;
    out.alpha0 = a0;
    out.tau2 = r2 > 0.0 ? 1.0 / r2 : std::numeric_limits<double>::infinity();
    Eigen::Matrix4d jac = sign.asDiagonal();
    jac(3, 3) *= r2 > 0.0 ? -out.tau2 * out.tau2 : 0.0;
    out.cov_stage2 = jac * lm.covariance() * jac.transpose();
    out.stage2_rms = std::sqrt(2.0 * lm.cost / static_cast<double>(n));
    return out;
}

// ---------------------------------------------------------------- presets

/// Linear range [start, stop] with n points.
inline std::vector<double> linspace(double start, double stop, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = n == 1 ? start : start + (stop - start) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

/// fig3 preset: envelope decay and residual rotation switched on,
/// 25 T_G values spanning rotations 0 to beyond 4 pi.
inline SequenceConfig fig3_config(SequenceConfig c) {
    c.overlap_amplitude = 0.6;
    c.overlap_tau = 150e-6;
    c.phi0 = 0.5;
    c.alpha0 = 0.1;
    return c;
}
inline std::vector<double> fig3_tg_values() { return linspace(0.0, 80e-6, 25); }

/// fig4a preset: gradient delayed and weakened so T_R can reach 100 us.
inline SequenceConfig fig4a_config(SequenceConfig c) {
    c.gradient_scale = 0.8;
    c.gradient_start = c.init_time + 110e-6;
    return c;
}
inline std::vector<double> fig4a_tr_values() { return linspace(0.0, 100e-6, 41); }

/// figS4 preset: extended flight and a residual bias gradient of about 2 pi over 10 ms.
inline SequenceConfig figS4_config(SequenceConfig c) {
    c.tof = 18e-3;
    c.bias.gradient = units::from_gauss_per_cm(0.42);
    return c;
}
inline std::vector<double> figS4_duration_values() { return linspace(0.0, 10e-3, 21); }

/// Residual imperfections for the orthogonal-clock shots: T_G set in 2 us
/// steps (uniform error of that full width), residual rotation and breakup.
inline SequenceConfig residual_imperfections(SequenceConfig c) {
    c.tg_jitter = 2e-6;
    c.phi0 = 0.5;
    c.alpha0 = 0.1;
    return c;
}

// ---------------------------------------------------------------- serialization

inline nlohmann::json to_json(const SweepResult& r) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : r.points) {
        nlohmann::json shots = nlohmann::json::array();
        for (const auto& s : p.shots) shots.push_back(to_json(s));
        pts.push_back({{"value_us", units::to_us(p.value)},
                       {"mean_visibility", p.mean_visibility},
                       {"variance", p.variance},
                       {"n", p.n},
                       {"shots", shots}});
    }
    return {{"parameter", r.parameter}, {"label", r.label}, {"clock_on", r.clock_on}, {"points", pts}};
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
    os.precision(17);
    os << r.parameter << "_us,mean_visibility,variance,n\n";
    for (const auto& p : r.points)
        os << units::to_us(p.value) << ',' << p.mean_visibility << ',' << p.variance << ',' << p.n << '\n';
}

inline nlohmann::json to_json(const ClockModelFit& f) {
    auto mat = [](const auto& m) {
        nlohmann::json a = nlohmann::json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
            a.push_back(row);
        }
        return a;
    };
    return {{"a", f.a},
            {"tau1_us", f.tau1},
            {"phi0_rad", f.phi0},
            {"delta_omega_rad_per_us", f.delta_omega},
            {"alpha0", f.alpha0},
            {"tau2_us", std::isfinite(f.tau2) ? nlohmann::json(f.tau2) : nlohmann::json(nullptr)},
            {"covariance_stage1", mat(f.cov_stage1)},
            {"covariance_stage2", mat(f.cov_stage2)},
            {"stage1_rms", f.stage1_rms},
            {"stage2_rms", f.stage2_rms}};
}

} // namespace clocksim

#include <gtest/gtest.h>

#include <sstream>

#include "clocksim/fringe_analysis.hpp"
#include "clocksim/oracle_checks.hpp"
#include "support.hpp"

using namespace clocksim;

namespace {
constexpr double pi = std::numbers::pi;

SpinorState single(double center, double k, double sigma0) {
    return {{GaussianTerm{Level::two, center, kConst.hbar * k, alpha_from_waist(sigma0, 0.0, 0.0), 1.0, 0.0}}, 0.0};
}

double far_field_error(const OracleConfig& c, double flight) {
    const double k = c.phase / c.separation;
    const auto pat = far_field_pattern(c.separation, k, flight, alpha_from_waist(c.sigma0, 0.0, 0.0), oracle_grid(c));
    const auto p = fringe_parameters(c.separation, k, flight, 0.0, c.sigma0);
    const double cm = 1.5 * hbar_over_m * k * flight;
    const auto& g = pat.final_state.grid;
    std::vector<double> ref(g.points);
    for (std::size_t i = 0; i < g.points; ++i) ref[i] = detection_probability(p, g.z(i) - cm);
    return detail::max_rel_error(pat.density, ref);
}

FringeProfile window(const GridPattern& pat, double half, std::size_t stride) {
    FringeProfile prof;
    const auto& g = pat.final_state.grid;
    for (std::size_t i = 0; i < g.points; i += stride) {
        if (std::abs(g.z(i)) > half) continue;
        prof.z.push_back(g.z(i));
        prof.density.push_back(pat.density[i]);
    }
    return prof;
}
} // namespace

TEST(SampleState, SingleGaussianNorm) {
    const GridSpec g{100e-6, 1 << 12, 0.1e-6, 0.0};
    const auto s = sample_state(single(2e-6, 1e6, 1e-6), g);
    EXPECT_NEAR(s.norm(), 1.0, 1e-10);
}

TEST(SampleState, SplitStateHumps) {
    const double d = 8e-6;
    const GridSpec g{100e-6, 1 << 12, 0.1e-6, 0.0};
    const auto s = sample_state(make_split_state(d, alpha_from_waist(0.7e-6, 0.0, 0.0)), g);
    const auto dens = s.density();
    std::vector<double> peaks;
    for (std::size_t i = 1; i + 1 < dens.size(); ++i)
        if (dens[i] > dens[i - 1] && dens[i] >= dens[i + 1] && dens[i] > 1e-3 * *std::max_element(dens.begin(), dens.end()))
            peaks.push_back(g.z(i));
    ASSERT_EQ(peaks.size(), 2u);
    EXPECT_NEAR(peaks[0], -0.5 * d, g.spacing());
    EXPECT_NEAR(peaks[1], 0.5 * d, g.spacing());
}

TEST(SampleState, GridOverlapMatchesAnalytic) {
    const GridSpec g{200e-6, 1 << 14, 0.1e-6, 0.0};
    const auto a = single(1e-6, 0.0, 1.2e-6);
    auto b = single(-0.5e-6, 8e5, 0.9e-6);
    const auto ga = sample_state(a, g), gb = sample_state(b, g);
    const cplx grid = ga.inner(gb, Level::two);
    EXPECT_NEAR(std::abs(grid - overlap(a.terms[0], b.terms[0])), 0.0, 1e-9);
}

TEST(SampleState, TailsAtEdgesRejected) {
    const GridSpec g{10e-6, 1 << 10, 0.1e-6, 0.0};
    EXPECT_THROW(sample_state(single(0.0, 0.0, 2e-6), g), GridTooSmall);
    EXPECT_THROW(sample_state(single(0.0, 0.0, 1e-7), GridSpec{10e-6, 100, 0.1e-6, 0.0}), InvalidParameter);
}

TEST(Propagate, ZeroDurationIdentity) {
    const GridSpec g{100e-6, 1 << 12, 0.1e-6, 0.0};
    const auto s = sample_state(single(2e-6, 1e6, 1e-6), g);
    const auto out = propagate(s, gradient_potential(0.3), 0.0);
    EXPECT_EQ(out.psi[1], s.psi[1]);
    EXPECT_EQ(out.psi[0], s.psi[0]);
}

TEST(Propagate, StepSizeGuard) {
    const GridSpec g{100e-6, 1 << 12, 1e-3, 0.0};
    ASSERT_GT(g.dt, g.max_stable_dt());
    const auto s = sample_state(single(0.0, 0.0, 1e-6), g);
    EXPECT_THROW(propagate(s, gradient_potential(0.3), 1e-5), StepSizeError);
    EXPECT_NO_THROW(propagate(s, {}, 1e-5)); // exact free step needs no dt
}

TEST(Propagate, NormConservedPerStep) {
    const GridSpec g{40e-6, 1024, 0.1e-6, 0.0};
    const double w = 2.0 * pi * 2e3;
    LevelPotential trap = [w](Level, double z, double) { return 0.5 * kConst.mass * w * w * z * z; };
    auto s = sample_state(single(3e-6, 0.0, 0.5e-6), g);
    const double n0 = s.norm();
    for (int i = 0; i < 50; ++i) {
        s = propagate(s, trap, g.dt);
        EXPECT_NEAR(s.norm(), n0, 1e-12);
    }
}

TEST(Propagate, FreeFlightMatchesAnalytic) {
    const auto r = check_free_flight(OracleConfig{});
    EXPECT_TRUE(r.passed) << r.value;
    EXPECT_LT(r.value, 1e-6);
}

TEST(Propagate, LinearPotentialThenFlight) {
    const auto r = check_gradient_pulse(OracleConfig{});
    EXPECT_TRUE(r.passed) << r.value << ' ' << r.message;
}

TEST(Propagate, SecondOrderInDt) {
    const auto st = convergence_study(OracleConfig{});
    ASSERT_EQ(st.ratios.size(), 2u);
    for (double q : st.ratios) EXPECT_NEAR(q, 4.0, 0.5);
}

TEST(FarField, MatchesClosedForm) {
    const auto r = check_far_field(OracleConfig{});
    EXPECT_TRUE(r.passed);
    EXPECT_LT(r.value, 1e-3);
}

TEST(FarField, FittedVisibilityAtTwoPiAndPi) {
    // d sigma0 m / hbar t = 0.055 keeps the two-packet envelope close to one Gaussian
    const double d = 4e-6, sigma0 = 0.03e-6, t = 3e-3;
    const GridSpec g{900e-6, 1 << 17, 0.1e-6, 0.0};
    const cplx alpha = alpha_from_waist(sigma0, 0.0, 0.0);
    const double sig = fringe_parameters(d, pi / d, t, 0.0, sigma0).sigma_t;
    const auto full = far_field_pattern(d, 2.0 * pi / d, t, alpha, g);
    const auto orth = far_field_pattern(d, pi / d, t, alpha, g);
    EXPECT_GT(fit_fringes(window(full, 2 * sig, 15)).visibility, 0.99);
    EXPECT_LT(fit_fringes(window(orth, 2 * sig, 15)).visibility, 0.01);
}

TEST(FarField, AgreementDegradesInsideGuard) {
    OracleConfig c;
    const double near_t = 0.02e-3; // hbar t / m = 1.5e-14 m^2 < 10 sigma0^2 = 1e-13 m^2
    ASSERT_FALSE(fringe_parameters(c.separation, 1.0, near_t, 0.0, c.sigma0).far_field);
    ASSERT_TRUE(fringe_parameters(c.separation, 1.0, c.flight, 0.0, c.sigma0).far_field);
    const double far = far_field_error(c, c.flight);
    const double near = far_field_error(c, near_t);
    EXPECT_LT(far, 1e-3);
    EXPECT_GT(near, 100.0 * far);
}

TEST(OracleChecks, CoarseGridFails) {
    OracleConfig c;
    c.points = 256;
    c.box = 2e-3;
    int failed = 0;
    for (const auto& r : run_oracle_checks(c)) failed += !r.passed;
    EXPECT_GE(failed, 1);
}

TEST(GridSpinor, CsvHeader) {
    const GridSpec g{100e-6, 256, 0.1e-6, 0.0};
    std::ostringstream os;
    sample_state(single(0.0, 0.0, 3e-6), g).write_csv(os);
    const auto text = os.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "z_um,density1_per_um,density2_per_um");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 257);
}

#include <gtest/gtest.h>

#include <sstream>

#include "clocksim/fringe_analysis.hpp"
#include "support.hpp"

using namespace clocksim;
using testsupport::Gen;

namespace {
constexpr double pi = std::numbers::pi;

struct Truth {
    double amplitude = 1.0, center = 0.0, width = 40e-6, period = 10e-6, phase = 0.0, visibility = 0.5,
           offset = 0.0;
};

double model(const Truth& t, double z) {
    const double e = std::exp(-0.5 * std::pow((z - t.center) / t.width, 2));
    return t.amplitude * e * (1.0 + t.visibility * std::cos(2.0 * pi * z / t.period + t.phase)) + t.offset;
}

/// Profile sampled at pixel centers and normalized to unit integral.
FringeProfile synthetic(const Truth& t, double pixel = 2e-6, double half = 200e-6) {
    FringeProfile p;
    p.z = pixel_grid(half, pixel);
    double sum = 0.0;
    for (double z : p.z) {
        p.density.push_back(model(t, z));
        sum += p.density.back() * pixel;
    }
    for (auto& v : p.density) v /= sum;
    return p;
}

RenderSettings settings(std::uint64_t seed, bool noise = true) {
    RenderSettings s;
    s.seed = seed;
    s.noise = noise;
    return s;
}

double fitted_v(const ShotImage& img) { return fit_fringes(integrate_columns(img)).visibility; }

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

} // namespace

// ---------------------------------------------------------------- render / integrate

TEST(RenderImage, TotalCountsNearAtomNumber) {
    const auto prof = synthetic({});
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const auto img = render_image(prof, settings(seed));
        EXPECT_NEAR(sum(img.counts), 1e4, 3.0 * std::sqrt(1e4));
        for (double c : img.counts) {
            EXPECT_GE(c, 0.0);
            EXPECT_EQ(c, std::floor(c));
        }
    }
}

TEST(RenderImage, NoiselessColumnsEqualSampledProbability) {
    const auto prof = synthetic({});
    const auto img = render_image(prof, settings(1, false));
    const auto col = integrate_columns(img);
    ASSERT_EQ(col.z.size(), prof.z.size());
    for (std::size_t i = 0; i < prof.z.size(); ++i) {
        EXPECT_NEAR(col.z[i], prof.z[i], 1e-15);
        EXPECT_NEAR(col.density[i], 1e4 * prof.density[i] * 2e-6, 1e-12 * 1e4 * prof.density[i] * 2e-6 + 1e-15);
    }
}

TEST(RenderImage, SameSeedBitIdentical) {
    const auto prof = synthetic({});
    const auto a = render_image(prof, settings(42));
    const auto b = render_image(prof, settings(42));
    const auto c = render_image(prof, settings(43));
    EXPECT_EQ(a.counts, b.counts);
    EXPECT_NE(a.counts, c.counts);
}

TEST(RenderImage, BlurConservesCountsAndLowersContrast) {
    const auto prof = synthetic({});
    auto s = settings(1, false);
    const auto sharp = render_image(prof, s);
    s.blur = 3e-6;
    const auto blurred = render_image(prof, s);
    EXPECT_NEAR(sum(blurred.expected), sum(sharp.expected), 1e-3 * sum(sharp.expected));
    EXPECT_LT(fitted_v(blurred), fitted_v(sharp));
}

TEST(RenderImage, Preconditions) {
    auto p = synthetic({});
    p.params = fringe_parameters_from_pattern(7.35e-6, 40e-6, 0.0, 0.0);
    EXPECT_THROW(render_image(p, settings(1)), NyquistError); // 2 um > 7.35 / 4 um
    p.params.reset();
    auto s = settings(1);
    s.pixel = 1.5e-6;
    EXPECT_THROW(render_image(p, s), GeometryMismatch);
    s = settings(1);
    s.atom_number = 0.0;
    EXPECT_THROW(render_image(p, s), InvalidParameter);
}

TEST(IntegrateColumns, UniformImageIsConstant) {
    ShotImage img;
    img.rows = 20;
    img.cols = 7;
    img.pixel = 2e-6;
    img.counts.assign(140, 3.0);
    img.expected = img.counts;
    const auto p = integrate_columns(img);
    for (double v : p.density) EXPECT_EQ(v, 21.0);
    EXPECT_NEAR(p.spacing(), 2e-6, 1e-18);
}

TEST(IntegrateColumns, PoissonChiSquarePerBin) {
    const auto prof = synthetic({});
    double chi = 0.0;
    std::size_t bins = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto img = render_image(prof, settings(seed));
        const auto got = integrate_columns(img);
        const auto want = integrate_columns(img, true);
        for (std::size_t i = 0; i < got.density.size(); ++i) {
            if (want.density[i] < 5.0) continue;
            chi += std::pow(got.density[i] - want.density[i], 2) / want.density[i];
            ++bins;
        }
    }
    ASSERT_GT(bins, 5000u);
    EXPECT_NEAR(chi / static_cast<double>(bins), 1.0, 0.05);
}

// ---------------------------------------------------------------- fits

TEST(FitFringes, RecoversVisibility044) {
    Truth t;
    t.visibility = 0.44;
    const auto f = fit_fringes(synthetic(t));
    EXPECT_TRUE(f.converged);
    EXPECT_NEAR(f.visibility, 0.44, 1e-3);
}

TEST(FitFringes, EnvelopeOnlyGivesZeroVisibility) {
    // the orthogonal-clock case: two shifted patterns cancel into a bare envelope
    const auto p = fringe_parameters_from_pattern(10e-6, 40e-6, pi, 0.0);
    const auto f = fit_fringes(fringe_profile(p, pixel_grid(160e-6, 2e-6)));
    EXPECT_LT(f.visibility, 0.01);
    EXPECT_GT(f.width, 0.0);
}

TEST(FitFringes, RecoversPhase) {
    Truth t;
    t.phase = 1.0;
    const auto f = fit_fringes(synthetic(t));
    EXPECT_NEAR(f.phase, 1.0, 2e-3);
}

TEST(FitFringes, RandomizedRoundTrip) {
    Gen g(21);
    for (int i = 0; i < 60; ++i) {
        Truth t;
        t.visibility = g.uniform(0.1, 0.95);
        t.phase = g.uniform(-pi, pi);
        t.period = g.uniform(6e-6, 14e-6);
        t.width = g.uniform(25e-6, 60e-6);
        t.center = g.uniform(-10e-6, 10e-6);
        const auto f = fit_fringes(synthetic(t, 2e-6, 4.0 * t.width));
        ASSERT_TRUE(f.converged) << i;
        EXPECT_NEAR(f.visibility, t.visibility, 1e-3 * t.visibility) << i;
        EXPECT_NEAR(f.period, t.period, 1e-3 * t.period) << i;
        EXPECT_NEAR(f.width, t.width, 1e-3 * t.width) << i;
        EXPECT_NEAR(f.center, t.center, 1e-3 * t.width) << i;
        EXPECT_NEAR(std::abs(wrap_phase(f.phase - t.phase)), 0.0, 1e-3) << i;
        EXPECT_GE(f.phase, -pi);
        EXPECT_LT(f.phase, pi);
    }
}

TEST(FitFringes, NoisyVisibilityUnbiased) {
    const double tol = 2.0 / std::sqrt(1e4);
    for (double v : {0.2, 0.5, 0.9}) {
        Truth t;
        t.visibility = v;
        const auto prof = synthetic(t);
        double mean = 0.0;
        const int n = 60;
        for (int s = 0; s < n; ++s) mean += fitted_v(render_image(prof, settings(1000 + s)));
        mean /= n;
        EXPECT_NEAR(mean, v, tol) << v;
    }
}

TEST(FitFringes, PureNoiseIsNotAnError) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    FringeProfile p;
    p.z = pixel_grid(100e-6, 2e-6);
    for (std::size_t i = 0; i < p.z.size(); ++i) p.density.push_back(10.0 + nd(rng));
    FitResult f;
    EXPECT_NO_THROW(f = fit_fringes(p));
    EXPECT_GE(f.visibility, 0.0);
    EXPECT_LE(f.visibility, 1.0);
}

TEST(FitFringes, InvariantsHoldOnNoisyShots) {
    Gen g(5);
    for (int i = 0; i < 30; ++i) {
        Truth t;
        t.visibility = g.uniform(0.0, 1.0);
        t.phase = g.uniform(-pi, pi);
        const auto f = fit_fringes(integrate_columns(render_image(synthetic(t), settings(i + 1))));
        EXPECT_GE(f.visibility, 0.0);
        EXPECT_LE(f.visibility, 1.0);
        EXPECT_GT(f.width, 0.0);
        if (f.converged) {
            EXPECT_GT(f.period, 2.0 * 2e-6);
        }
        EXPECT_GE(f.phase, -pi);
        EXPECT_LT(f.phase, pi);
    }
}

TEST(FitFringes, JsonRecord) {
    const auto j = to_json(fit_fringes(synthetic({})));
    for (const char* k : {"visibility", "phase_rad", "period_um", "width_um", "center_um", "converged"})
        EXPECT_TRUE(j.contains(k)) << k;
}

TEST(FitLocal, RecoversUniformPattern) {
    Truth t;
    t.visibility = 0.6;
    t.phase = 0.3;
    const auto p = synthetic(t, 0.5e-6);
    const auto f = fit_local(p, 0.0, 10e-6, 10e-6);
    EXPECT_TRUE(f.converged);
    EXPECT_NEAR(f.visibility, 0.6, 1e-2);
    EXPECT_NEAR(f.period, 10e-6, 1e-8);
}

// ---------------------------------------------------------------- averaging

TEST(AverageShots, CopiesGiveTheImage) {
    const auto img = render_image(synthetic({}), settings(9));
    const auto avg = average_shots(std::vector<ShotImage>(100, img));
    for (std::size_t i = 0; i < img.counts.size(); ++i) EXPECT_NEAR(avg.counts[i], img.counts[i], 1e-12);
}

TEST(AverageShots, GeometryMismatch) {
    const auto a = render_image(synthetic({}), settings(1));
    auto b = a;
    b.origin_z += 2e-6;
    EXPECT_THROW(average_shots({a, b}), GeometryMismatch);
    EXPECT_THROW(average_shots({}), InvalidParameter);
}

namespace {

struct AverageRun {
    double ratio, resultant;
};

AverageRun average_run(const std::vector<double>& phases, std::uint64_t seed) {
    std::vector<ShotImage> imgs;
    double single = 0.0;
    for (std::size_t j = 0; j < phases.size(); ++j) {
        Truth t;
        t.phase = phases[j];
        imgs.push_back(render_image(synthetic(t), settings(seed * 1000 + j)));
        single += fitted_v(imgs.back());
    }
    single /= static_cast<double>(phases.size());
    return {fitted_v(average_shots(imgs)) / single, circular_stats(phases).resultant};
}

} // namespace

TEST(AverageShots, VisibilityScalesWithResultant) {
    // per run the ratio tracks the sample R; across runs it approaches exp(-sigma^2 / 2)
    const double sigma = 0.454;
    double mean_ratio = 0.0;
    const int runs = 5;
    for (int r = 0; r < runs; ++r) {
        std::mt19937_64 rng(100 + r);
        const auto run = average_run(wrapped_gaussian(100, 0.0, sigma, rng), 100 + r);
        EXPECT_NEAR(run.ratio, run.resultant, 0.02);
        mean_ratio += run.ratio / runs;
    }
    EXPECT_NEAR(mean_ratio, std::exp(-0.5 * sigma * sigma), 0.02);
}

TEST(AverageShots, UniformPhasesWashOut) {
    // The average keeps a fraction R of the single-shot visibility. For 100
    // uniform phases R is Rayleigh distributed with mean sqrt(pi / 400) = 0.089,
    // so a single draw exceeds 0.1 about e^-1 of the time; check the mechanism
    // per run and the expectation over many cheap draws.
    std::uniform_real_distribution<double> u(-pi, pi);
    for (int r = 0; r < 8; ++r) {
        std::mt19937_64 rng(500 + r);
        std::vector<double> ph(100);
        for (auto& p : ph) p = u(rng);
        const auto run = average_run(ph, 500 + r);
        EXPECT_NEAR(run.ratio, run.resultant, 0.02);
    }
    std::mt19937_64 rng(9);
    double mean_r = 0.0;
    const int draws = 20000;
    for (int r = 0; r < draws; ++r) {
        std::vector<double> ph(100);
        for (auto& p : ph) p = u(rng);
        mean_r += circular_stats(ph).resultant / draws;
    }
    EXPECT_LT(mean_r, 0.1);
}

// ---------------------------------------------------------------- statistics

TEST(CircularStats, EqualPhases) {
    const auto s = circular_stats(std::vector<double>(10, 0.7));
    EXPECT_NEAR(s.resultant, 1.0, 1e-15);
    EXPECT_NEAR(s.sigma, 0.0, 1e-7);
    ASSERT_TRUE(s.mean);
    EXPECT_NEAR(*s.mean, 0.7, 1e-15);
}

TEST(CircularStats, OppositePhasesHaveNoMean) {
    const auto s = circular_stats({0.0, pi});
    EXPECT_EQ(s.resultant, 0.0);
    EXPECT_FALSE(s.mean);
    EXPECT_THROW(circular_stats({1.0}), InvalidParameter);
}

TEST(CircularStats, WrappedGaussianSigma) {
    std::mt19937_64 rng(314);
    EXPECT_NEAR(circular_stats(wrapped_gaussian(100000, 0.2, 0.314, rng)).sigma, 0.314, 0.01);
    for (double s : {0.05, 0.2, 0.454, 0.6, 0.8}) {
        const auto st = circular_stats(wrapped_gaussian(100000, -2.5, s, rng));
        EXPECT_NEAR(st.sigma, s, 0.01) << s;
        EXPECT_NEAR(std::abs(wrap_phase(*st.mean + 2.5)), 0.0, 0.02) << s;
        EXPECT_NEAR(st.sigma, std::sqrt(-2.0 * std::log(st.resultant)), 1e-12);
    }
}

TEST(CoherenceTest, IdenticalPhases) {
    const auto t = coherence_test(std::vector<double>(100, 0.3), 100);
    EXPECT_LT(t.p_value, 1e-40);
    EXPECT_EQ(t.p_monte_carlo, 1.0 / 101.0);
    EXPECT_THROW(coherence_test(std::vector<double>(9, 0.0), 10), InvalidParameter);
}

TEST(CoherenceTest, PaperWidthRejectsUniform) {
    std::mt19937_64 rng(454);
    const auto t = coherence_test(wrapped_gaussian(100, 0.0, 0.454, rng), 200);
    EXPECT_LT(t.p_value, 1e-30);
}

TEST(CoherenceTest, UniformPhasesGiveUniformP) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-pi, pi);
    const int trials = 2000;
    std::vector<double> ps;
    for (int i = 0; i < trials; ++i) {
        std::vector<double> ph(100);
        for (auto& p : ph) p = u(rng);
        ps.push_back(coherence_test(ph, 0).p_value);
    }
    std::sort(ps.begin(), ps.end());
    // Kolmogorov-Smirnov distance to U(0,1); 1.63 / sqrt(n) is the 1% critical value
    double ks = 0.0;
    for (int i = 0; i < trials; ++i)
        ks = std::max({ks, std::abs(ps[i] - static_cast<double>(i) / trials),
                       std::abs(ps[i] - static_cast<double>(i + 1) / trials)});
    EXPECT_LT(ks, 1.63 / std::sqrt(trials));
}

TEST(CoherenceTest, MonteCarloAgreesWithAsymptotic) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-pi, pi);
    std::vector<double> ph(100);
    for (auto& p : ph) p = u(rng);
    const auto t = coherence_test(ph, 4000, 5);
    EXPECT_NEAR(t.p_monte_carlo, t.p_value, 0.05);
}

TEST(PhaseHistogram, BinsAndWrap) {
    const auto h = phase_histogram({0.05, 0.05 + 2.0 * pi, -pi, pi - 1e-9});
    EXPECT_EQ(h.size(), 63u);
    EXPECT_EQ(std::accumulate(h.begin(), h.end(), std::size_t{0}), 4u);
    EXPECT_EQ(h[0], 1u);
    EXPECT_EQ(h[static_cast<std::size_t>((0.05 + pi) / 0.1)], 2u);
    EXPECT_EQ(h.back(), 1u);
}

// ---------------------------------------------------------------- image I/O

TEST(ImageIo, CsvRoundTrip) {
    const auto img = render_image(synthetic({}), settings(3));
    std::stringstream ss;
    write_image_csv(ss, img);
    const auto back = read_image_csv(ss);
    EXPECT_EQ(back.rows, img.rows);
    EXPECT_EQ(back.cols, img.cols);
    EXPECT_NEAR(back.pixel, img.pixel, 1e-18);
    EXPECT_NEAR(back.origin_z, img.origin_z, 1e-18);
    EXPECT_EQ(back.counts, img.counts);
}

TEST(ImageIo, BinaryIsLittleEndianFloat64) {
    auto img = render_image(synthetic({}), settings(1, false));
    std::stringstream ss;
    write_image_binary(ss, img);
    const std::string raw = ss.str();
    const auto nl = raw.find('\n');
    EXPECT_EQ(raw.substr(0, nl + 1), image_header(img));
    EXPECT_EQ(raw.size() - nl - 1, 8 * img.rows * img.cols);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[nl + 1 + k])) << (8 * k);
    EXPECT_EQ(std::bit_cast<double>(bits), img.counts[0]);
    const auto back = read_image_binary(ss);
    EXPECT_EQ(back.counts, img.counts);
}

TEST(ImageIo, MalformedInputRejected) {
    std::istringstream bad("3 3 2 0\n");
    EXPECT_THROW(read_image_csv(bad), InvalidParameter);
    std::istringstream short_csv("2 2 2 0 0\n1,2\n");
    EXPECT_THROW(read_image_csv(short_csv), InvalidParameter);
}

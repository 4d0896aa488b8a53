#pragma once

// Independent reference computations for the tests: plain quadrature, an RK4
// two-level integrator, and a seeded parameter generator for property tests.

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <random>

namespace testsupport {

using cplx = std::complex<double>;

/// Composite Simpson rule over [a, b] with n (even) intervals.
template <class T, class F>
T simpson(F&& f, double a, double b, std::size_t n = 20000) {
    if (n % 2) ++n;
    const double h = (b - a) / static_cast<double>(n);
    T s = f(a) + f(b);
    for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + h * static_cast<double>(i));
    return s * (h / 3.0);
}

/// RK4 for i d/dt c = H c with H = 1/2 [[-delta, Omega e^{i phi}], [Omega e^{-i phi}, delta]].
inline std::array<cplx, 2> rk4_two_level(std::array<cplx, 2> c, double omega, double delta, double phase,
                                         double duration, std::size_t steps = 20000) {
    using namespace std::complex_literals;
    const cplx h12 = 0.5 * omega * std::polar(1.0, phase);
    const cplx h21 = 0.5 * omega * std::polar(1.0, -phase);
    auto deriv = [&](const std::array<cplx, 2>& v) {
        return std::array<cplx, 2>{-1i * (-0.5 * delta * v[0] + h12 * v[1]), -1i * (h21 * v[0] + 0.5 * delta * v[1])};
    };
    const double h = duration / static_cast<double>(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        auto k1 = deriv(c);
        auto k2 = deriv({c[0] + 0.5 * h * k1[0], c[1] + 0.5 * h * k1[1]});
        auto k3 = deriv({c[0] + 0.5 * h * k2[0], c[1] + 0.5 * h * k2[1]});
        auto k4 = deriv({c[0] + h * k3[0], c[1] + h * k3[1]});
        for (int i = 0; i < 2; ++i) c[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return c;
}

/// Hand-rolled generator for property tests.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool coin() { return integer(0, 1) == 1; }
    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

} // namespace testsupport

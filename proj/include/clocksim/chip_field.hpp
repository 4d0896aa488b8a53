#pragma once

// Magnetostatics of the three-wire chip structure (infinite straight wires
// along y, lying in the chip plane z = 0) plus a uniform bias along y.

#include <array>
#include <cmath>
#include <vector>

#include "core.hpp"

namespace clocksim {

class SingularityError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

struct Wire {
    double x = 0.0;      // m, position in the chip plane
    double direction = 1.0; // +1: current along +y, -1: along -y
};

struct WireGeometry {
    std::vector<Wire> wires;
    double current = 0.0;       // A, magnitude per wire
    double wire_length = 10e-3; // m, informational; fields use the infinite-wire limit

    /// Three wires, centers `spacing` apart, alternating current directions.
    static WireGeometry three_wire(double spacing = 100e-6, double current = 0.83) {
        return {{{-spacing, 1.0}, {0.0, -1.0}, {spacing, 1.0}}, current, 10e-3};
    }

    void validate() const {
        if (wires.empty()) throw InvalidParameter("WireGeometry: at least one wire required");
    }
};

struct BiasField {
    double magnitude = 0.0; // T, along +y at z = 0
    double gradient = 0.0;  // dB_y/dz, T/m

    double at(double z) const { return magnitude + gradient * z; }
};

struct FieldVector {
    std::array<double, 3> b{0.0, 0.0, 0.0}; // (Bx, By, Bz), T
    double magnitude = 0.0;
};

/// Field of one infinite wire at a point (x, z) of the xz-plane.
inline std::array<double, 3> wire_field(const Wire& wire, double current, double x, double z) {
    const double rx = x - wire.x;
    const double rz = z;
    const double r2 = rx * rx + rz * rz;
    if (r2 == 0.0) throw SingularityError("wire_field: point lies on a wire");
    const double pref = kConst.mu0 * current * wire.direction / (2.0 * std::numbers::pi * r2);
    // y_hat x r = (r_z, 0, -r_x)
    return {pref * rz, 0.0, -pref * rx};
}

inline FieldVector field_at(const WireGeometry& geometry, const BiasField& bias, double x, double z) {
    geometry.validate();
    FieldVector f;
    for (const auto& w : geometry.wires) {
        const double xr = x - w.x;
        if (xr * xr + z * z < 1e-30) throw SingularityError("field_at: point lies on a wire");
        const auto b = wire_field(w, geometry.current, x, z);
        f.b[0] += b[0];
        f.b[2] += b[2];
    }
    f.b[1] += bias.at(z);
    f.magnitude = std::hypot(f.b[0], f.b[1], f.b[2]);
    return f;
}

/// |B(x, z1)| - |B(x, z2)| along the separation axis.
inline double field_difference(const WireGeometry& geometry, const BiasField& bias, double z1,
                               double z2, double x = 0.0) {
    return field_at(geometry, bias, x, z1).magnitude - field_at(geometry, bias, x, z2).magnitude;
}

/// Differential precession rate of two clocks sitting in fields differing by dB:
/// the |1>-|2> splitting is g_F mu_B B with g_F = 1/2.
inline double delta_omega(double dB) {
    return kConst.g_f * kConst.mu_bohr / kConst.hbar * dB;
}

/// Effective gradient preset: the field difference between the two packets is
/// fixed (it is not derived from a packet position), and the linear gradient
/// seen by the atoms is that difference over a reference separation.
struct GradientPreset {
    double delta_b = 0.0387e-4;          // T
    double reference_separation = 3.5e-6; // m

    double gradient() const { return delta_b / reference_separation; }
    double delta_omega() const { return clocksim::delta_omega(delta_b); }

    /// Packet separation at which the preset gradient yields the target
    /// differential rate (rad/s).
    double calibrated_separation(double target_delta_omega) const {
        return reference_separation * target_delta_omega / delta_omega();
    }
};

} // namespace clocksim

#pragma once

// INI-style run configuration in lab units (us, um, G). The schema is
// documented in README.md; every key is optional.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "experiment.hpp"
#include "oracle_checks.hpp"

namespace clocksim {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Preset { fig3, fig4a, figS4, custom };

inline Preset parse_preset(const std::string& s) {
    if (s == "fig3") return Preset::fig3;
    if (s == "fig4a") return Preset::fig4a;
    if (s == "figS4") return Preset::figS4;
    if (s == "custom") return Preset::custom;
    throw ConfigError("sweep.preset: unknown preset '" + s + "' (fig3|fig4a|figS4|custom)");
}

struct SweepSpec {
    std::optional<Preset> preset; // unset: plain defaults, no sweep preset
    std::string parameter = "tg"; // tg | tr | bias_duration
    std::vector<double> values;   // s
    bool clock = true;
    double rotation_pi = 1.0;     // tr sweeps: target rotation in units of pi
};

struct RunConfig {
    SequenceConfig sequence;
    SweepSpec sweep;
    OracleConfig oracle;
    std::string format = "both";      // csv | json | both
    std::string image_format = "csv"; // csv | binary
};

namespace detail {

class Reader {
public:
    explicit Reader(const boost::property_tree::ptree& pt) : pt_(pt) {}

    template <class T>
    std::optional<T> get(const std::string& key) {
        used_.insert(key);
        const auto node = pt_.get_child_optional(boost::property_tree::ptree::path_type(key, '.'));
        if (!node) return std::nullopt;
        const std::string raw = node->data();
        if constexpr (std::is_same_v<T, std::string>) {
            return raw;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
            if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
            throw ConfigError(key + ": expected a boolean, got '" + raw + "'");
        } else {
            std::istringstream is(raw);
            T v{};
            if (!(is >> v) || !(is >> std::ws).eof())
                throw ConfigError(key + ": expected a number, got '" + raw + "'");
            return v;
        }
    }

    double number(const std::string& key, double fallback) { return get<double>(key).value_or(fallback); }

    double nonneg(const std::string& key, double fallback) {
        const double v = number(key, fallback);
        if (!(v >= 0.0)) throw ConfigError(key + ": must be >= 0");
        return v;
    }

    double positive(const std::string& key, double fallback) {
        const double v = number(key, fallback);
        if (!(v > 0.0)) throw ConfigError(key + ": must be > 0");
        return v;
    }

    std::vector<double> list(const std::string& key) {
        std::vector<double> out;
        const auto raw = get<std::string>(key);
        if (!raw) return out;
        std::stringstream ss(*raw);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            std::istringstream is(cell);
            double v;
            if (!(is >> v) || !(is >> std::ws).eof()) throw ConfigError(key + ": bad list entry '" + cell + "'");
            out.push_back(v);
        }
        return out;
    }

    void reject_unknown() const {
        for (const auto& [section, body] : pt_) {
            if (body.empty() && !body.data().empty()) {
                throw ConfigError(section + ": key outside of any section");
            }
            for (const auto& kv : body) {
                const std::string key = section + "." + kv.first;
                if (!used_.count(key)) throw ConfigError(key + ": unknown key");
            }
        }
    }

private:
    const boost::property_tree::ptree& pt_;
    std::set<std::string> used_;
};

} // namespace detail

inline SequenceConfig preset_sequence(Preset p) {
    switch (p) {
    case Preset::fig3: return fig3_config({});
    case Preset::fig4a: return fig4a_config({});
    case Preset::figS4: return figS4_config({});
    case Preset::custom: break;
    }
    return {};
}

/// Keys override the preset's sequence; `preset` (from the command line)
/// overrides sweep.preset.
inline RunConfig parse_config(std::istream& is, std::optional<Preset> preset = std::nullopt) {
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::read_ini(is, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    detail::Reader r(pt);
    RunConfig rc;
    using namespace units;
    if (auto v = r.get<std::string>("sweep.preset")) rc.sweep.preset = parse_preset(*v);
    if (preset) rc.sweep.preset = *preset;
    rc.sequence = preset_sequence(rc.sweep.preset.value_or(Preset::custom));
    auto& s = rc.sequence;

    // [run]
    if (auto v = r.get<long long>("run.seed")) {
        if (*v < 0) throw ConfigError("run.seed: must be >= 0");
        s.seed = static_cast<std::uint64_t>(*v);
    }
    if (auto v = r.get<long long>("run.shots_per_point")) {
        if (*v < 1) throw ConfigError("run.shots_per_point: must be >= 1");
        s.shots_per_point = static_cast<std::size_t>(*v);
    }
    if (auto v = r.get<std::string>("run.format")) {
        if (*v != "csv" && *v != "json" && *v != "both") throw ConfigError("run.format: expected csv|json|both");
        rc.format = *v;
    }
    if (auto v = r.get<std::string>("run.image_format")) {
        if (*v != "csv" && *v != "binary") throw ConfigError("run.image_format: expected csv|binary");
        rc.image_format = *v;
    }

    // [sequence]
    if (auto v = r.get<double>("sequence.separation_um")) {
        if (!(*v > 0.0)) throw ConfigError("sequence.separation_um: must be > 0");
        s.separation = from_um(*v);
    }
    s.sigma0 = from_um(r.positive("sequence.sigma0_um", to_um(s.sigma0)));
    if (auto v = r.get<double>("sequence.waist_time_us")) s.waist_time = from_us(*v);
    s.split_time = from_us(r.nonneg("sequence.split_time_us", to_us(s.split_time)));
    s.init_time = from_us(r.nonneg("sequence.init_time_us", to_us(s.init_time)));
    if (s.init_time < s.split_time) throw ConfigError("sequence.init_time_us: must be >= sequence.split_time_us");
    s.tof = from_us(r.positive("sequence.tof_us", to_us(s.tof)));

    // [clock]
    s.clock_pulse.rabi_frequency =
        from_rad_per_us(r.nonneg("clock.rabi_frequency_rad_per_us", to_rad_per_us(s.clock_pulse.rabi_frequency)));
    s.clock_pulse.duration = from_us(r.nonneg("clock.duration_us", to_us(s.clock_pulse.duration)));
    s.clock_pulse.detuning = from_rad_per_us(r.number("clock.detuning_rad_per_us", to_rad_per_us(s.clock_pulse.detuning)));
    s.clock_pulse.phase = r.number("clock.phase_rad", s.clock_pulse.phase);

    // [gradient]
    s.gradient_preset.delta_b = from_gauss(r.number("gradient.delta_b_gauss", to_gauss(s.gradient_preset.delta_b)));
    s.gradient_preset.reference_separation =
        from_um(r.positive("gradient.reference_separation_um", to_um(s.gradient_preset.reference_separation)));
    s.gradient_scale = r.number("gradient.scale", s.gradient_scale);
    if (auto v = r.get<double>("gradient.gradient_g_per_cm")) s.gradient_override = from_gauss_per_cm(*v);
    s.tg = from_us(r.nonneg("gradient.tg_us", to_us(s.tg)));
    s.gradient_gap = from_us(r.nonneg("gradient.gap_us", to_us(s.gradient_gap)));
    if (auto v = r.get<double>("gradient.start_us")) {
        if (!(*v >= 0.0)) throw ConfigError("gradient.start_us: must be >= 0");
        s.gradient_start = from_us(*v);
    }
    const auto rotation_pi = r.get<double>("gradient.rotation_pi");

    // [residual]
    s.phi0 = r.number("residual.phi0_rad", s.phi0);
    s.alpha0 = r.number("residual.alpha0", s.alpha0);
    s.overlap_amplitude = r.number("residual.overlap_amplitude", s.overlap_amplitude);
    if (!(s.overlap_amplitude > 0.0 && s.overlap_amplitude <= 1.0))
        throw ConfigError("residual.overlap_amplitude: must lie in (0, 1]");
    s.overlap_tau = from_us(r.nonneg("residual.overlap_tau_us", to_us(s.overlap_tau)));
    s.tg_jitter = from_us(r.nonneg("residual.tg_jitter_us", to_us(s.tg_jitter)));

    // [bias]
    s.bias.magnitude = from_gauss(r.nonneg("bias.magnitude_gauss", to_gauss(s.bias.magnitude)));
    s.bias.gradient = from_gauss_per_cm(r.number("bias.gradient_g_per_cm", to_gauss_per_cm(s.bias.gradient)));
    s.bias_duration = from_us(r.nonneg("bias.duration_us", to_us(s.bias_duration)));

    // [imaging]
    s.imaging.pixel = from_um(r.positive("imaging.pixel_um", to_um(s.imaging.pixel)));
    s.imaging.blur = from_um(r.nonneg("imaging.blur_um", to_um(s.imaging.blur)));
    s.imaging.atom_number = r.positive("imaging.atom_number", s.imaging.atom_number);
    s.imaging.transverse_width = from_um(r.positive("imaging.transverse_width_um", to_um(s.imaging.transverse_width)));
    s.imaging.noise = r.get<bool>("imaging.noise").value_or(s.imaging.noise);
    s.imaging.half_extent_sigmas = r.positive("imaging.half_extent_sigmas", s.imaging.half_extent_sigmas);

    // [sweep]
    auto& w = rc.sweep;
    if (auto v = r.get<std::string>("sweep.parameter")) {
        if (*v != "tg" && *v != "tr" && *v != "bias_duration")
            throw ConfigError("sweep.parameter: expected tg|tr|bias_duration");
        w.parameter = *v;
    }
    w.clock = r.get<bool>("sweep.clock").value_or(true);
    w.rotation_pi = r.number("sweep.rotation_pi", 1.0);
    const auto list = r.list("sweep.values_us");
    const auto start = r.get<double>("sweep.start_us");
    const auto stop = r.get<double>("sweep.stop_us");
    const auto step = r.get<double>("sweep.step_us");
    if (!list.empty()) {
        for (double v : list) {
            if (!(v >= 0.0)) throw ConfigError("sweep.values_us: entries must be >= 0");
            w.values.push_back(from_us(v));
        }
    } else if (start || stop || step) {
        if (!start || !stop || !step) throw ConfigError("sweep.start_us/stop_us/step_us: all three are required");
        if (!(*step > 0.0)) throw ConfigError("sweep.step_us: must be > 0");
        if (*start < 0.0) throw ConfigError("sweep.start_us: must be >= 0");
        for (double v = *start; v <= *stop + 1e-9 * *step; v += *step) w.values.push_back(from_us(v));
    }
    if (w.preset == Preset::custom && w.values.size() < 2)
        throw ConfigError("sweep.values_us: custom sweeps need a range with >= 2 values");
    if (w.values.size() == 1) throw ConfigError("sweep.values_us: a sweep needs >= 2 values");

    // [oracle]
    auto& o = rc.oracle;
    if (auto v = r.get<long long>("oracle.points")) {
        if (*v < 256 || (*v & (*v - 1)) != 0) throw ConfigError("oracle.points: must be a power of two >= 256");
        o.points = static_cast<std::size_t>(*v);
    }
    o.box = from_um(r.positive("oracle.box_um", to_um(o.box)));
    o.dt = from_us(r.positive("oracle.dt_us", to_us(o.dt)));
    o.separation = from_um(r.positive("oracle.separation_um", to_um(o.separation)));
    o.sigma0 = from_um(r.positive("oracle.sigma0_um", to_um(o.sigma0)));
    o.flight = from_us(r.positive("oracle.flight_us", to_us(o.flight)));
    o.free_flight = from_us(r.positive("oracle.free_flight_us", to_us(o.free_flight)));
    o.phase = r.number("oracle.phase_rad", o.phase);
    o.gradient_duration = from_us(r.positive("oracle.gradient_us", to_us(o.gradient_duration)));
    o.free_tolerance = r.positive("oracle.free_tolerance", o.free_tolerance);
    o.far_field_tolerance = r.positive("oracle.far_field_tolerance", o.far_field_tolerance);

    r.reject_unknown();
    try {
        s.validate();
    } catch (const InvalidParameter& e) {
        throw ConfigError(e.what());
    }

    if (rotation_pi) {
        try {
            s.tg = calibrate_tg(s, *rotation_pi * std::numbers::pi);
        } catch (const PreconditionError& e) {
            throw ConfigError(std::string("gradient.rotation_pi: ") + e.what());
        }
    }
    return rc;
}

inline RunConfig load_config(const std::string& path, std::optional<Preset> preset = std::nullopt) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    return parse_config(f, preset);
}

} // namespace clocksim

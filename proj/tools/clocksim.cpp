// clocksim: run single shots, parameter sweeps and the grid oracle checks.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "clocksim/config.hpp"

namespace fs = std::filesystem;
using namespace clocksim;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfigError = 2, kPrecondition = 3 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::string> format;
    std::optional<std::string> preset;
    bool no_noise = false;
};

RunConfig load(const Options& o) {
    std::optional<Preset> preset;
    if (o.preset) preset = parse_preset(*o.preset);
    RunConfig rc;
    if (!o.config.empty()) {
        rc = load_config(o.config, preset);
    } else {
        std::istringstream empty;
        rc = parse_config(empty, preset);
    }
    if (o.seed) rc.sequence.seed = *o.seed;
    if (o.format) rc.format = *o.format;
    if (o.no_noise) rc.sequence.imaging.noise = false;
    return rc;
}

fs::path out_dir(const Options& o) {
    fs::path p = o.out;
    if (p.empty()) {
        const char* env = std::getenv("CLOCKSIM_OUT_DIR");
        p = env && *env ? env : "out";
    }
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw ConfigError("--out: cannot create output directory '" + p.string() + "'");
    return p;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
    std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
    if (!f) throw ConfigError("--out: cannot write '" + p.string() + "'");
    return f;
}

bool wants_csv(const RunConfig& rc) { return rc.format != "json"; }
bool wants_json(const RunConfig& rc) { return rc.format != "csv"; }

int cmd_shot(const Options& o) {
    const RunConfig rc = load(o);
    const fs::path dir = out_dir(o);
    const auto shot = run_shot(rc.sequence, rc.sequence.seed);

    if (rc.image_format == "binary") {
        auto f = open_out(dir / "image.bin", true);
        write_image_binary(f, shot.image);
    } else {
        auto f = open_out(dir / "image.csv");
        write_image_csv(f, shot.image);
    }
    {
        auto f = open_out(dir / "profile.csv");
        const auto prof = integrate_columns(shot.image);
        f << "z_um,counts\n" << std::setprecision(17);
        for (std::size_t i = 0; i < prof.z.size(); ++i)
            f << units::to_um(prof.z[i] + prof.lab_offset) << ',' << prof.density[i] << '\n';
    }
    {
        auto j = to_json(shot.fit);
        j["seed"] = shot.seed;
        j["tg_us"] = units::to_us(shot.tg_effective);
        j["rotation_rad"] = shot.rotation;
        auto f = open_out(dir / "fit.json");
        f << nlohmann::json::array({j}).dump(2) << '\n';
    }
    std::cout << std::setprecision(6) << "V = " << shot.fit.visibility << "\nphi = " << shot.fit.phase << " rad\n";
    return kOk;
}

void emit(const RunConfig& rc, const fs::path& dir, const SweepResult& r) {
    const std::string stem = "sweep_" + r.label;
    if (wants_csv(rc)) {
        auto f = open_out(dir / (stem + ".csv"));
        write_sweep_csv(f, r);
    }
    if (wants_json(rc)) {
        auto f = open_out(dir / (stem + ".json"));
        f << to_json(r).dump(2) << '\n';
    }
    std::cout << r.label << ": " << r.points.size() << " points\n";
}

double spread(const SweepResult& r) {
    const auto m = r.means();
    const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
    return *hi - *lo;
}

int cmd_sweep(const Options& o) {
    const RunConfig rc = load(o);
    if (!rc.sweep.preset) throw ConfigError("sweep.preset: no preset given (config or --preset)");
    const fs::path dir = out_dir(o);
    const auto& s = rc.sequence;
    const auto& w = rc.sweep;
    auto values_or = [&](std::vector<double> fallback) { return w.values.empty() ? fallback : w.values; };
    std::cout << std::setprecision(6);

    switch (*w.preset) {
    case Preset::fig3: {
        const auto tg = values_or(fig3_tg_values());
        const auto clock = sweep_tg(s, tg, s.shots_per_point, true);
        const auto noclock = sweep_tg(s, tg, s.shots_per_point, false);
        emit(rc, dir, clock);
        emit(rc, dir, noclock);
        const auto fit = fit_clock_model(clock, noclock);
        auto f = open_out(dir / "clock_fit.json");
        f << to_json(fit).dump(2) << '\n';
        std::cout << "a = " << fit.a << "\ntau1 = " << fit.tau1 << " us\nphi0 = " << fit.phi0
                  << " rad\ndelta_omega = " << fit.delta_omega << " rad/us\nalpha0 = " << fit.alpha0
                  << "\ntau2 = " << fit.tau2 << " us\n";
        break;
    }
    case Preset::fig4a: {
        const auto tr = values_or(fig4a_tr_values());
        for (double rot : {1.0, 2.0}) {
            const auto r = sweep_tr(s, tr, rot * std::numbers::pi);
            emit(rc, dir, r);
            std::cout << "rotation " << rot << " pi: max-min visibility = " << spread(r) << '\n';
        }
        break;
    }
    case Preset::figS4: {
        const auto r = sweep_bias_duration(s, values_or(figS4_duration_values()));
        emit(rc, dir, r);
        std::cout << "max-min visibility = " << spread(r) << '\n';
        break;
    }
    case Preset::custom: {
        SweepResult r;
        if (w.parameter == "tg") r = sweep_tg(s, w.values, s.shots_per_point, w.clock);
        else if (w.parameter == "tr") r = sweep_tr(s, w.values, w.rotation_pi * std::numbers::pi);
        else r = sweep_bias_duration(s, w.values);
        emit(rc, dir, r);
        break;
    }
    }
    return kOk;
}

int cmd_oracle(const Options& o) {
    const RunConfig rc = load(o);
    const fs::path dir = out_dir(o);
    const auto& c = rc.oracle;
    const auto results = run_oracle_checks(c);
    int failed = 0;
    for (const auto& r : results) {
        std::cout << std::left << std::setw(16) << r.name << std::setprecision(4) << std::scientific << r.value
                  << std::defaultfloat;
        if (r.tolerance > 0.0) std::cout << "  (tolerance " << r.tolerance << ')';
        std::cout << (r.passed ? "  ok" : "  FAILED");
        if (!r.message.empty()) std::cout << "  " << r.message;
        std::cout << '\n';
        if (!r.passed) {
            std::cerr << "check failed: " << r.name << (r.message.empty() ? "" : ": " + r.message) << '\n';
            ++failed;
        }
    }
    if (wants_csv(rc)) {
        try {
            const double k = c.phase / c.separation;
            const auto pat = far_field_pattern(c.separation, k, c.flight, alpha_from_waist(c.sigma0, 0.0, 0.0),
                                               oracle_grid(c));
            auto f = open_out(dir / "far_field_grid.csv");
            pat.final_state.write_csv(f);
        } catch (const PreconditionError&) {
            // already reported by the check above
        }
    }
    return failed ? kCheckFailed : kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clock wave-packet interferometer simulator"};
    app.require_subcommand(1);
    Options o;
    std::string seed_text, format, preset;
    app.add_option("--config", o.config, "INI config file (lab units)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed_text, "master seed");
    app.add_option("--out", o.out, "output directory (default: $CLOCKSIM_OUT_DIR or ./out)");
    app.add_option("--format", format, "csv|json|both")->check(CLI::IsMember({"csv", "json", "both"}));
    app.add_option("--preset", preset, "fig3|fig4a|figS4|custom")
        ->check(CLI::IsMember({"fig3", "fig4a", "figS4", "custom"}));
    app.add_flag("--no-noise", o.no_noise, "disable Poisson noise");
    auto* shot = app.add_subcommand("shot", "run one shot: image, profile CSV, fit JSON");
    auto* sweep = app.add_subcommand("sweep", "run a preset or custom sweep");
    auto* oracle = app.add_subcommand("oracle", "analytic vs split-step grid checks");
    for (auto* sub : {shot, sweep, oracle}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        if (!seed_text.empty()) {
            std::size_t pos = 0;
            unsigned long long v = 0;
            try {
                v = std::stoull(seed_text, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != seed_text.size() || seed_text.front() == '-')
                throw ConfigError("--seed: expected a non-negative integer");
            o.seed = v;
        }
        if (!format.empty()) o.format = format;
        if (!preset.empty()) o.preset = preset;
        if (*shot) return cmd_shot(o);
        if (*sweep) return cmd_sweep(o);
        return cmd_oracle(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const Error& e) {
        std::cerr << "precondition error: " << e.what() << '\n';
        return kPrecondition;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kPrecondition;
    }
}

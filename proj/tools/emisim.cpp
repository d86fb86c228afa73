#include "emi/engine.hpp"
#include "emi/fitting.hpp"
#include "emi/hfed.hpp"
#include "emi/netlist.hpp"
#include "emi/numbers.hpp"
#include "emi/scenarios.hpp"
#include "emi/spectral.hpp"
#include "emi/svg.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Exit code 2: bad flags, unparsable inputs, failed validation.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exit code 1: the command ran but the result is a failure.
struct DomainError : std::runtime_error {
    DomainError(std::string kind, const std::string& message)
        : std::runtime_error(message), kind(std::move(kind)) {}
    std::string kind;
};

void emit_error(const std::string& kind, const std::string& message) {
    std::cerr << "emisim: error: " << message << "\n";
    json err;
    err["error"]["kind"] = kind;
    err["error"]["message"] = message;
    std::cerr << err.dump() << "\n";
}

std::string default_out_dir(const std::string& flag_value) {
    if (!flag_value.empty())
        return flag_value;
    if (const char* env = std::getenv("EMISIM_OUT_DIR"); env && *env)
        return env;
    return ".";
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw UsageError("cannot read file: " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DomainError("io", "cannot write file: " + path.string());
    out << content;
}

double parse_quantity(const std::string& flag, const std::string& text) {
    auto value = emi::parse_si_number(text);
    if (!value)
        throw UsageError(flag + ": not a number: '" + text + "'");
    return *value;
}

// Accepts both canonical trace files and bare spectrum CSV.
emi::spectral::Spectrum load_spectrum(const std::string& path) {
    std::string text = slurp(path);
    if (text.find("#instrument=") != std::string::npos)
        return emi::hfed::read_trace(text).spectrum;
    try {
        return emi::spectral::from_csv(text);
    } catch (const emi::spectral::SpectralError& e) {
        throw UsageError(path + ": " + e.what());
    }
}

json compare_json(const emi::spectral::CompareResult& r, double lo_hz, double hi_hz) {
    json out;
    out["band_hz"] = {lo_hz, hi_hz};
    out["log_spectral_distance_db"] = r.log_spectral_distance_db;
    out["peak_match_fraction"] = r.peak_match_fraction;
    out["per_peak_delta_db"] = json::array();
    for (const auto& [freq, delta] : r.per_peak_delta_db)
        out["per_peak_delta_db"].push_back({{"freq_hz", freq}, {"delta_db", delta}});
    return out;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::string netlist_path;
    std::string template_name;
    std::string vsupply, fsw, duty, l, c, r;
    std::string esr_l = "0", esr_c = "0", rline = "0";
    int cycles = 20000;
    int capture_cycles = 16;
    int steps_per_period = 512;
    double settle_tol = 1e-6;
    std::string out;
    bool plot = false;
};

emi::netlist::Netlist simulate_netlist(const SimulateArgs& a) {
    if (!a.netlist_path.empty()) {
        try {
            return emi::netlist::parse_netlist(slurp(a.netlist_path));
        } catch (const emi::netlist::ParseError& e) {
            throw UsageError(a.netlist_path + ": " + e.what());
        }
    }
    if (a.template_name != "buck")
        throw UsageError("unknown template '" + a.template_name + "' (known: buck)");
    const std::vector<std::pair<const char*, const std::string*>> required = {
        {"--vsupply", &a.vsupply}, {"--fsw", &a.fsw}, {"--duty", &a.duty},
        {"--l", &a.l},             {"--c", &a.c},     {"--r", &a.r},
    };
    for (const auto& [flag, value] : required)
        if (value->empty())
            throw UsageError(std::string(flag) + " is required with --template buck");
    emi::netlist::BuckParams p;
    p.vsupply_volts = parse_quantity("--vsupply", a.vsupply);
    p.fsw_hz = parse_quantity("--fsw", a.fsw);
    p.duty_fraction = parse_quantity("--duty", a.duty);
    p.inductance_henries = parse_quantity("--l", a.l);
    p.capacitance_farads = parse_quantity("--c", a.c);
    p.load_resistance_ohms = parse_quantity("--r", a.r);
    p.esr_l_ohms = parse_quantity("--esr-l", a.esr_l);
    p.esr_c_ohms = parse_quantity("--esr-c", a.esr_c);
    p.line_resistance_ohms = parse_quantity("--rline", a.rline);
    try {
        emi::netlist::validate(p);
    } catch (const emi::netlist::ValidationError& e) {
        throw UsageError(e.what());
    }
    return emi::netlist::buck_template(p);
}

int run_simulate(const SimulateArgs& a) {
    if (a.steps_per_period < 64)
        throw UsageError("--steps-per-period must be at least 64 (got " +
                         std::to_string(a.steps_per_period) + ")");
    if (a.cycles < 1)
        throw UsageError("--cycles must be positive");
    if (a.capture_cycles < 1 || a.capture_cycles > a.cycles)
        throw UsageError("--capture-cycles must be in [1, --cycles]");

    emi::netlist::Netlist net = simulate_netlist(a);
    emi::engine::SimConfig cfg;
    cfg.steps_per_switch_period = a.steps_per_period;
    cfg.total_cycles = a.cycles;
    cfg.capture_cycles = a.capture_cycles;
    cfg.settle_tolerance = a.settle_tol;

    emi::engine::TransientResult result;
    try {
        result = emi::engine::run_transient(net, cfg);
    } catch (const emi::engine::EngineError& e) {
        throw DomainError("simulation", e.what());
    }

    fs::path dir = default_out_dir(a.out);
    write_file(dir / "waveforms.csv", emi::engine::to_csv(result.waveforms));
    std::cout << "wrote " << (dir / "waveforms.csv").string() << " ("
              << result.waveforms.samples() << " samples, dt "
              << emi::format_double(result.waveforms.dt_seconds) << " s)\n";

    const std::vector<double>* supply = result.waveforms.signal("i_supply");
    if (supply) {
        emi::spectral::Spectrum spec = emi::spectral::spectrum(
            *supply, result.waveforms.dt_seconds, emi::spectral::Window::rectangular,
            static_cast<int>(supply->size()));
        try {
            spec = emi::scenarios::band_limit(spec, emi::hfed::kMinFreqHz,
                                              emi::hfed::kMaxFreqHz);
        } catch (const emi::scenarios::ScenarioError&) {
            // Capture too short for the conducted band; keep the full spectrum.
        }
        write_file(dir / "spectrum.csv", emi::spectral::to_csv(spec));
        std::cout << "wrote " << (dir / "spectrum.csv").string() << " ("
                  << spec.power_dbm.size() << " bins, df "
                  << emi::format_double(spec.df_hz) << " Hz)\n";
        if (a.plot) {
            write_file(dir / "spectrum.svg",
                       emi::svg::spectrum_svg(spec, "supply current spectrum",
                                              spec.f0_hz,
                                              spec.freq_at(spec.bins() - 1)));
            std::cout << "wrote " << (dir / "spectrum.svg").string() << "\n";
        }
    } else {
        std::cout << "no i_supply probe; spectrum skipped\n";
    }

    if (!result.diagnostics.settled)
        std::cout << "warning: capture may include transient (no steady state within "
                  << a.cycles << " cycles)\n";
    return 0;
}

// ---------------------------------------------------------------- scenario

int run_scenario_cmd(const std::string& name, const std::string& override_path,
                     const std::string& out) {
    emi::scenarios::ScenarioOverrides overrides;
    if (!override_path.empty()) {
        try {
            overrides = emi::scenarios::ScenarioOverrides::from_json(slurp(override_path));
        } catch (const emi::scenarios::ScenarioError& e) {
            throw UsageError(override_path + ": " + e.what());
        }
    }

    emi::scenarios::ScenarioResult result;
    try {
        result = emi::scenarios::run_scenario(name, overrides);
    } catch (const emi::scenarios::ScenarioError& e) {
        std::string what = e.what();
        if (what.find("unknown scenario") != std::string::npos)
            throw UsageError(what);
        throw DomainError("scenario", what);
    }

    fs::path dir = default_out_dir(out);
    emi::scenarios::export_result(result, dir.string());

    std::cout << "scenario " << result.name << "\n";
    for (const auto& a : result.assertions) {
        std::cout << (a.passed ? "  [pass] " : "  [FAIL] ") << a.name << ": measured "
                  << emi::format_fixed(a.measured, 3) << ", threshold "
                  << emi::format_fixed(a.threshold, 3);
        if (!a.detail.empty())
            std::cout << " (" << a.detail << ")";
        std::cout << "\n";
    }

    // Per-harmonic attenuation table for the line impedance experiment.
    if (result.name == "line_impedance") {
        const auto& near = result.spectra.at("r0");
        const auto& far = result.spectra.at("r2");
        std::cout << "  harmonic attenuation (dB):\n";
        for (const auto& peak : emi::spectral::find_peaks(near, -150.0, 6.0)) {
            double there = emi::spectral::value_at(far, peak.freq_hz);
            std::cout << "    " << emi::format_fixed(peak.freq_hz / 1e3, 1) << " kHz: "
                      << emi::format_fixed(peak.power_dbm - there, 2) << "\n";
        }
    }

    std::cout << "wrote " << (dir / result.name).string() << "/\n";
    std::cout << (result.all_passed() ? "all assertions passed" : "assertions FAILED")
              << "\n";
    return result.all_passed() ? 0 : 1;
}

// ---------------------------------------------------------------- fit

emi::fitting::FitConfig fit_config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string("fit config is not json: ") + e.what());
    }
    if (!doc.is_object())
        throw UsageError("fit config must be a json object");
    emi::fitting::FitConfig cfg;
    for (const auto& [key, value] : doc.items()) {
        try {
            if (key == "fsw_lo_hz")
                cfg.fsw_lo_hz = value.get<double>();
            else if (key == "fsw_hi_hz")
                cfg.fsw_hi_hz = value.get<double>();
            else if (key == "max_harmonics")
                cfg.max_harmonics = value.get<int>();
            else if (key == "comb_significance_db")
                cfg.comb_significance_db = value.get<double>();
            else if (key == "band_lo_hz")
                cfg.band_lo_hz = value.get<double>();
            else if (key == "band_hi_hz")
                cfg.band_hi_hz = value.get<double>();
            else if (key == "max_iterations")
                cfg.max_iterations = value.get<int>();
            else if (key == "convergence_tol_db")
                cfg.convergence_tol_db = value.get<double>();
            else if (key == "grid_factors")
                cfg.grid_factors = value.get<std::vector<double>>();
            else if (key == "duty_fraction")
                cfg.duty_fraction = value.get<double>();
            else if (key == "steps_per_switch_period")
                cfg.steps_per_switch_period = value.get<int>();
            else if (key == "total_cycles")
                cfg.total_cycles = value.get<int>();
            else if (key == "capture_cycles")
                cfg.capture_cycles = value.get<int>();
            else if (key == "settle_tolerance")
                cfg.settle_tolerance = value.get<double>();
            else
                throw UsageError("unknown fit config key '" + key + "'");
        } catch (const json::exception&) {
            throw UsageError("fit config key '" + key + "' has the wrong type");
        }
    }
    try {
        cfg.validate();
    } catch (const emi::fitting::FittingError& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

int run_fit(const std::string& target_path, const std::string& config_path,
            const std::string& out) {
    emi::spectral::Spectrum target = load_spectrum(target_path);
    emi::fitting::FitConfig cfg;
    if (!config_path.empty())
        cfg = fit_config_from_json(slurp(config_path));

    emi::fitting::FitReport report;
    try {
        report = emi::fitting::fit_appliance(target, cfg);
    } catch (const emi::fitting::NoCombFound& e) {
        throw DomainError("no_comb_found", e.what());
    } catch (const emi::fitting::FittingError& e) {
        throw DomainError("fitting", e.what());
    }

    emi::engine::SimConfig sim;
    sim.steps_per_switch_period = cfg.steps_per_switch_period;
    sim.total_cycles = cfg.total_cycles;
    sim.capture_cycles = cfg.capture_cycles;
    sim.settle_tolerance = cfg.settle_tolerance;
    emi::spectral::Spectrum model = emi::scenarios::simulate_supply_spectrum(
        emi::netlist::buck_template(report.params), sim);

    fs::path dir = default_out_dir(out);
    write_file(dir / "report.json", emi::fitting::report_json(report));
    write_file(dir / "model.csv", emi::spectral::to_csv(model));

    std::cout << "fit loss " << emi::format_fixed(report.loss_db, 3) << " dB, fsw "
              << emi::format_double(report.params.fsw_hz) << " Hz\n";
    for (const auto& stage : report.trace)
        std::cout << "  " << stage.stage << ": loss "
                  << emi::format_fixed(stage.loss_db, 3) << " dB\n";
    for (const auto& note : report.notes)
        std::cout << "  note: " << note << "\n";
    std::cout << "wrote " << (dir / "report.json").string() << "\n";
    std::cout << "wrote " << (dir / "model.csv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- compare

int run_compare(const std::string& a_path, const std::string& b_path,
                const std::string& band, const std::string& out) {
    auto colon = band.find(':');
    if (colon == std::string::npos)
        throw UsageError("--band must be LO:HI, e.g. 10k:5M");
    double lo = parse_quantity("--band", band.substr(0, colon));
    double hi = parse_quantity("--band", band.substr(colon + 1));
    if (!(lo > 0) || !(hi > lo))
        throw UsageError("--band must satisfy 0 < LO < HI");

    emi::spectral::Spectrum a = load_spectrum(a_path);
    emi::spectral::Spectrum b = load_spectrum(b_path);
    emi::spectral::CompareResult result;
    try {
        result = emi::spectral::compare_spectra(a, b, lo, hi);
    } catch (const emi::spectral::DisjointBands&) {
        throw DomainError("disjoint_coverage", "disjoint frequency coverage");
    }

    std::string text = compare_json(result, lo, hi).dump(2) + "\n";
    std::cout << text;
    if (!out.empty())
        write_file(out, text);
    return 0;
}

// ---------------------------------------------------------------- import

int run_import(const std::string& dataset, const std::string& out,
               const std::string& instrument_name, const std::string& setup_name) {
    auto instrument = emi::hfed::parse_instrument(instrument_name);
    if (!instrument)
        throw UsageError("unknown instrument '" + instrument_name +
                         "' (known: signal_analyzer, usrp)");
    auto setup = emi::hfed::parse_setup(setup_name);
    if (!setup)
        throw UsageError("unknown setup '" + setup_name +
                         "' (known: lab_setup1..lab_setup4, home_setup1)");
    if (!fs::is_directory(dataset))
        throw UsageError("not a directory: " + dataset);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dataset)) {
        if (!entry.is_regular_file())
            continue;
        std::string ext = entry.path().extension().string();
        if (ext == ".csv" || ext == ".txt" || ext == ".dat")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw DomainError("import", "no importable files (.csv/.txt/.dat) in " + dataset);

    fs::path dir = default_out_dir(out);
    for (const auto& file : files) {
        std::string stem = file.stem().string();
        emi::hfed::MeasuredTrace trace;
        try {
            trace = emi::hfed::import_trace_file(file.string(), *instrument, *setup, stem);
        } catch (const emi::hfed::HfedError& e) {
            throw DomainError("import", file.string() + ": " + e.what());
        }
        fs::path target = dir / (stem + ".trace.csv");
        write_file(target, emi::hfed::write_trace(trace));
        std::cout << "imported " << file.string() << " -> " << target.string() << " ("
                  << trace.spectrum.power_dbm.size() << " points)\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EMI propagation simulator and measurement toolkit"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    SimulateArgs sim;
    CLI::App* simulate = app.add_subcommand(
        "simulate", "Run a transient simulation and export waveforms and spectrum");
    simulate->add_option("--netlist", sim.netlist_path, "Netlist file to simulate");
    simulate->add_option("--template", sim.template_name,
                         "Built-in appliance template (buck)");
    simulate->add_option("--vsupply", sim.vsupply, "Supply voltage, SI suffixes allowed");
    simulate->add_option("--fsw", sim.fsw, "Switching frequency in Hz");
    simulate->add_option("--duty", sim.duty, "Switch duty fraction in (0, 1)");
    simulate->add_option("--l", sim.l, "Filter inductance in H");
    simulate->add_option("--c", sim.c, "Filter capacitance in F");
    simulate->add_option("--r", sim.r, "Load resistance in ohm");
    simulate->add_option("--esr-l", sim.esr_l, "Inductor series resistance in ohm");
    simulate->add_option("--esr-c", sim.esr_c, "Capacitor series resistance in ohm");
    simulate->add_option("--rline", sim.rline, "Supply line resistance in ohm");
    simulate->add_option("--cycles", sim.cycles, "Total switching cycles to run");
    simulate->add_option("--capture-cycles", sim.capture_cycles,
                         "Cycles recorded at the end of the run");
    simulate->add_option("--steps-per-period", sim.steps_per_period,
                         "Time steps per switching period (minimum 64)");
    simulate->add_option("--settle-tol", sim.settle_tol,
                         "Relative cycle-to-cycle steady-state tolerance");
    simulate->add_option("--out", sim.out, "Output directory (default $EMISIM_OUT_DIR)");
    simulate->add_flag("--plot", sim.plot, "Also write an SVG plot of the spectrum");

    std::string scen_name, scen_override, scen_out;
    CLI::App* scenario =
        app.add_subcommand("scenario", "Run a named experiment with assertions");
    scenario->add_option("--name", scen_name, "Scenario name")->required();
    scenario->add_option("--override", scen_override,
                         "JSON file overriding appliance or simulation parameters");
    scenario->add_option("--out", scen_out, "Output directory (default $EMISIM_OUT_DIR)");

    std::string fit_target, fit_config, fit_out;
    CLI::App* fit = app.add_subcommand(
        "fit", "Recover appliance parameters matching a measured trace");
    fit->add_option("--target", fit_target, "Target trace or spectrum CSV")->required();
    fit->add_option("--config", fit_config, "JSON fit configuration");
    fit->add_option("--out", fit_out, "Output directory (default $EMISIM_OUT_DIR)");

    std::string cmp_a, cmp_b, cmp_band = "10k:5M", cmp_out;
    CLI::App* compare =
        app.add_subcommand("compare", "Compare two spectra over a frequency band");
    compare->add_option("--a", cmp_a, "First trace or spectrum CSV")->required();
    compare->add_option("--b", cmp_b, "Second trace or spectrum CSV")->required();
    compare->add_option("--band", cmp_band, "Band LO:HI with SI suffixes");
    compare->add_option("--out", cmp_out, "Also write the metrics JSON to this file");

    std::string imp_dataset, imp_out, imp_instrument = "signal_analyzer",
                             imp_setup = "lab_setup1";
    CLI::App* import_cmd = app.add_subcommand(
        "import", "Convert externally formatted measurement files to canonical traces");
    import_cmd->add_option("--dataset", imp_dataset, "Directory of raw measurement files")
        ->required();
    import_cmd->add_option("--out", imp_out, "Output directory (default $EMISIM_OUT_DIR)");
    import_cmd->add_option("--instrument", imp_instrument,
                           "Capturing instrument (signal_analyzer, usrp)");
    import_cmd->add_option("--setup", imp_setup,
                           "Measurement setup (lab_setup1..4, home_setup1)");

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            throw UsageError(e.what());
        }

        if (simulate->parsed()) {
            bool has_netlist = !sim.netlist_path.empty();
            bool has_template = !sim.template_name.empty();
            if (has_netlist == has_template)
                throw UsageError("exactly one of --netlist or --template is required");
            return run_simulate(sim);
        }
        if (scenario->parsed())
            return run_scenario_cmd(scen_name, scen_override, scen_out);
        if (fit->parsed())
            return run_fit(fit_target, fit_config, fit_out);
        if (compare->parsed())
            return run_compare(cmp_a, cmp_b, cmp_band, cmp_out);
        if (import_cmd->parsed())
            return run_import(imp_dataset, imp_out, imp_instrument, imp_setup);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        emit_error("usage", e.what());
        return 2;
    } catch (const DomainError& e) {
        emit_error(e.kind, e.what());
        return 1;
    } catch (const std::exception& e) {
        emit_error("internal", e.what());
        return 1;
    }
}

#include "emi/scenarios.hpp"

#include "emi/hfed.hpp"
#include "emi/numbers.hpp"
#include "emi/svg.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

namespace emi::scenarios {

namespace {

using netlist::BuckParams;
using netlist::FilterParams;
using netlist::Netlist;
using spectral::Spectrum;

// Ripple targets behind the L/C design equations.
constexpr double kRippleCurrentAmps = 0.05;
constexpr double kRippleVoltageVolts = 0.0125;

// Default series resistances controlling spectral peak width.
constexpr double kEsrLOhms = 0.05;
constexpr double kEsrCOhms = 0.02;

constexpr double kPeakFloorDbm = -150;
constexpr double kMatchFloorDbm = -120;

BuckParams buck_from(double fsw_hz, const ScenarioOverrides& ov) {
    BuckParams p;
    p.vsupply_volts = ov.vsupply_volts.value_or(0.05);
    p.duty_fraction = ov.duty_fraction.value_or(0.5);
    p.fsw_hz = fsw_hz;
    double d = p.duty_fraction;
    p.inductance_henries = ov.inductance_henries.value_or(
        d * (1 - d) * p.vsupply_volts / (kRippleCurrentAmps * p.fsw_hz));
    p.capacitance_farads = ov.capacitance_farads.value_or(
        kRippleCurrentAmps / (8 * p.fsw_hz * kRippleVoltageVolts));
    p.load_resistance_ohms = ov.load_resistance_ohms.value_or(1000);
    p.esr_l_ohms = ov.esr_l_ohms.value_or(kEsrLOhms);
    p.esr_c_ohms = ov.esr_c_ohms.value_or(kEsrCOhms);
    return p;
}

engine::SimConfig config_from(const ScenarioOverrides& ov) {
    engine::SimConfig cfg;
    if (ov.steps_per_switch_period)
        cfg.steps_per_switch_period = *ov.steps_per_switch_period;
    if (ov.total_cycles)
        cfg.total_cycles = *ov.total_cycles;
    if (ov.capture_cycles)
        cfg.capture_cycles = *ov.capture_cycles;
    if (ov.settle_tolerance)
        cfg.settle_tolerance = *ov.settle_tolerance;
    return cfg;
}

const spectral::Peak* nearest_peak(const std::vector<spectral::Peak>& peaks, double f,
                                   double half_bin) {
    const spectral::Peak* best = nullptr;
    for (const auto& p : peaks)
        if (std::abs(p.freq_hz - f) <= half_bin)
            if (!best || p.power_dbm > best->power_dbm)
                best = &p;
    return best;
}

using SpectrumMap = std::map<std::string, Spectrum>;

struct Scenario {
    std::string name;
    std::function<SpectrumMap(const ScenarioOverrides&)> build;
    std::function<std::vector<AssertionOutcome>(const SpectrumMap&)> check;
};

Netlist appliance(double fsw_hz, const ScenarioOverrides& ov) {
    return netlist::buck_template(buck_from(fsw_hz, ov));
}

Netlist coupled(int filtered_cases, double tap2_ohms, const ScenarioOverrides& ov) {
    Netlist app1 = appliance(ov.fsw_hz.value_or(100e3), ov);
    Netlist app2 = appliance(40e3, ov);
    if (filtered_cases)
        app2 = netlist::insert_input_filter(app2, FilterParams{1e3, 50});
    return netlist::bus_compose({app1, app2}, {4.0, tap2_ohms});
}

std::vector<AssertionOutcome> check_router(const SpectrumMap& spectra,
                                           double fsw_hz) {
    const Spectrum& s = spectra.at("i_supply");
    auto peaks = spectral::find_peaks(s, kPeakFloorDbm, 6);
    std::vector<AssertionOutcome> out;

    AssertionOutcome dominant;
    dominant.name = "dominant_peak_at_fsw";
    dominant.threshold = fsw_hz;
    if (!peaks.empty()) {
        const auto& top =
            *std::max_element(peaks.begin(), peaks.end(), [](auto& a, auto& b) {
                return a.power_dbm < b.power_dbm;
            });
        dominant.measured = top.freq_hz;
        dominant.passed = std::abs(top.freq_hz - fsw_hz) <= s.df_hz / 2;
        dominant.detail = "strongest peak at " + format_double(top.freq_hz) + " Hz, " +
                          format_double(top.power_dbm) + " dBm";
    } else {
        dominant.detail = "no peaks above " + format_double(kPeakFloorDbm) + " dBm";
    }
    out.push_back(dominant);

    AssertionOutcome harmonics;
    harmonics.name = "harmonics_above_floor";
    harmonics.threshold = 10;
    int found = 0;
    for (int n = 1; n <= 10; ++n)
        if (nearest_peak(peaks, n * fsw_hz, s.df_hz / 2))
            ++found;
    harmonics.measured = found;
    harmonics.passed = found == 10;
    harmonics.detail = std::to_string(found) + " of 10 harmonics above " +
                       format_double(kPeakFloorDbm) + " dBm";
    out.push_back(harmonics);
    return out;
}

std::vector<AssertionOutcome> check_line_impedance(const SpectrumMap& spectra) {
    const Spectrum& near = spectra.at("r0");
    const Spectrum& far = spectra.at("r2");
    auto peaks = spectral::find_peaks(near, kMatchFloorDbm, 6);

    double min_att = std::numeric_limits<double>::infinity();
    double max_att = -std::numeric_limits<double>::infinity();
    for (const auto& p : peaks) {
        double att = p.power_dbm - spectral::value_at(far, p.freq_hz);
        min_att = std::min(min_att, att);
        max_att = std::max(max_att, att);
    }

    std::vector<AssertionOutcome> out;
    AssertionOutcome nonneg;
    nonneg.name = "attenuation_nonnegative";
    nonneg.measured = min_att;
    nonneg.threshold = 0;
    nonneg.passed = !peaks.empty() && min_att >= 0;
    nonneg.detail = "smallest per-peak attenuation " + format_double(min_att) +
                    " dB over " + std::to_string(peaks.size()) + " peaks";
    out.push_back(nonneg);

    AssertionOutcome bounded;
    bounded.name = "max_attenuation_in_range";
    bounded.measured = max_att;
    bounded.threshold = 10;
    bounded.passed = !peaks.empty() && max_att > 0 && max_att <= 10;
    bounded.detail = "largest per-peak attenuation " + format_double(max_att) + " dB";
    out.push_back(bounded);
    return out;
}

AssertionOutcome interharmonic_present(const Spectrum& s, int m, int n,
                                       const std::string& name) {
    auto peaks = spectral::find_peaks(s, -130, 6);
    auto labels = spectral::harmonic_families(peaks, {100e3, 40e3}, 6, s.df_hz);
    AssertionOutcome out;
    out.name = name;
    out.threshold = -130;
    double f = m * 100e3 + n * 40e3;
    for (const auto& label : labels)
        if (label.m == m && label.n == n) {
            out.passed = true;
            out.measured = label.peak.power_dbm;
            out.detail = "peak at " + format_double(label.peak.freq_hz) + " Hz labeled " +
                         std::to_string(m) + "*100kHz" + (n < 0 ? "-" : "+") +
                         std::to_string(std::abs(n)) + "*40kHz";
            return out;
        }
    out.measured = spectral::value_at(s, f);
    out.detail = "no labeled peak near " + format_double(f) + " Hz";
    return out;
}

std::vector<AssertionOutcome> check_case1(const SpectrumMap& spectra) {
    const Spectrum& s = spectra.at("case1");
    return {interharmonic_present(s, 1, -1, "interharmonic_diff_present"),
            interharmonic_present(s, 1, 1, "interharmonic_sum_present")};
}

std::vector<AssertionOutcome> check_case2(const SpectrumMap& spectra) {
    const Spectrum& plain = spectra.at("case1");
    const Spectrum& filtered = spectra.at("case2");

    std::vector<AssertionOutcome> out;
    AssertionOutcome family;
    family.name = "fsw2_family_suppressed";
    family.threshold = 10;
    double min_drop = std::numeric_limits<double>::infinity();
    std::string parts;
    for (double f : {40e3, 80e3, 120e3}) {
        double before = spectral::value_at(plain, f);
        if (before < kMatchFloorDbm)
            continue; // harmonic already at the floor
        double drop = before - spectral::value_at(filtered, f);
        min_drop = std::min(min_drop, drop);
        if (!parts.empty())
            parts += ", ";
        parts += format_double(f / 1e3) + " kHz: " + format_double(drop) + " dB";
    }
    family.measured = min_drop;
    family.passed = std::isfinite(min_drop) && min_drop >= family.threshold;
    family.detail = "suppression " + parts;
    out.push_back(family);

    AssertionOutcome margin;
    margin.name = "fundamental_margin_at_fsw1";
    margin.threshold = 6;
    margin.measured =
        spectral::value_at(plain, 100e3) - spectral::value_at(filtered, 100e3);
    margin.passed = margin.measured >= margin.threshold;
    margin.detail = "100 kHz drop with the neighbour filtered: " +
                    format_double(margin.measured) + " dB";
    out.push_back(margin);
    return out;
}

std::vector<AssertionOutcome> check_case3(const SpectrumMap& spectra) {
    double p1 = spectral::value_at(spectra.at("case1"), 100e3);
    double p2 = spectral::value_at(spectra.at("case2"), 100e3);
    double p3 = spectral::value_at(spectra.at("case3"), 100e3);

    std::vector<AssertionOutcome> out;
    AssertionOutcome above;
    above.name = "filter_case_below_line_case";
    above.threshold = 6;
    above.measured = p3 - p2;
    above.passed = above.measured >= above.threshold;
    above.detail = "100 kHz recovers " + format_double(above.measured) +
                   " dB when the appliances sit 10 m apart";
    out.push_back(above);

    AssertionOutcome below;
    below.name = "line_case_below_plain_case";
    below.threshold = 0;
    below.measured = p1 - p3;
    below.passed = below.measured >= below.threshold;
    below.detail = "100 kHz still " + format_double(below.measured) +
                   " dB under the unfiltered arrangement";
    out.push_back(below);
    return out;
}

const std::vector<Scenario>& registry() {
    static const std::vector<Scenario> scenarios = [] {
        std::vector<Scenario> list;

        list.push_back(
            {"router_solo",
             [](const ScenarioOverrides& ov) {
                 Netlist n = appliance(ov.fsw_hz.value_or(100e3), ov);
                 return SpectrumMap{
                     {"i_supply", simulate_supply_spectrum(n, config_from(ov))}};
             },
             [](const SpectrumMap& spectra) {
                 return check_router(spectra, 100e3);
             }});

        list.push_back(
            {"line_impedance",
             [](const ScenarioOverrides& ov) {
                 BuckParams base = buck_from(ov.fsw_hz.value_or(100e3), ov);
                 BuckParams distant = base;
                 distant.line_resistance_ohms = ov.line_resistance_ohms.value_or(2.0);
                 auto cfg = config_from(ov);
                 return SpectrumMap{
                     {"r0",
                      simulate_supply_spectrum(netlist::buck_template(base), cfg)},
                     {"r2",
                      simulate_supply_spectrum(netlist::buck_template(distant), cfg)}};
             },
             check_line_impedance});

        list.push_back({"coupling_case1",
                        [](const ScenarioOverrides& ov) {
                            auto cfg = config_from(ov);
                            return SpectrumMap{
                                {"case1",
                                 simulate_supply_spectrum(coupled(0, 0.0, ov), cfg)}};
                        },
                        check_case1});

        list.push_back(
            {"coupling_case2",
             [](const ScenarioOverrides& ov) {
                 auto cfg = config_from(ov);
                 return SpectrumMap{
                     {"case1", simulate_supply_spectrum(coupled(0, 0.0, ov), cfg)},
                     {"case2", simulate_supply_spectrum(coupled(1, 0.0, ov), cfg)}};
             },
             check_case2});

        list.push_back(
            {"coupling_case3",
             [](const ScenarioOverrides& ov) {
                 auto cfg = config_from(ov);
                 return SpectrumMap{
                     {"case1", simulate_supply_spectrum(coupled(0, 0.0, ov), cfg)},
                     {"case2", simulate_supply_spectrum(coupled(1, 0.0, ov), cfg)},
                     {"case3", simulate_supply_spectrum(coupled(1, 2.0, ov), cfg)}};
             },
             check_case3});

        return list;
    }();
    return scenarios;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ScenarioError("cannot open " + path + " for writing");
    out << content;
    if (!out)
        throw ScenarioError("write to " + path + " failed");
}

} // namespace

bool ScenarioResult::all_passed() const {
    return std::all_of(assertions.begin(), assertions.end(),
                       [](const AssertionOutcome& a) { return a.passed; });
}

ScenarioOverrides ScenarioOverrides::from_json(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError(std::string("bad overrides JSON: ") + e.what());
    }
    if (!root.is_object())
        throw ScenarioError("overrides JSON must be an object");

    ScenarioOverrides ov;
    for (const auto& [key, value] : root.items()) {
        auto number = [&](std::optional<double>& slot) {
            if (!value.is_number())
                throw ScenarioError("override " + key + " must be a number");
            slot = value.get<double>();
        };
        auto integer = [&](std::optional<int>& slot) {
            if (!value.is_number_integer())
                throw ScenarioError("override " + key + " must be an integer");
            slot = value.get<int>();
        };
        if (key == "vsupply_volts")
            number(ov.vsupply_volts);
        else if (key == "duty_fraction")
            number(ov.duty_fraction);
        else if (key == "fsw_hz")
            number(ov.fsw_hz);
        else if (key == "inductance_henries")
            number(ov.inductance_henries);
        else if (key == "capacitance_farads")
            number(ov.capacitance_farads);
        else if (key == "load_resistance_ohms")
            number(ov.load_resistance_ohms);
        else if (key == "esr_l_ohms")
            number(ov.esr_l_ohms);
        else if (key == "esr_c_ohms")
            number(ov.esr_c_ohms);
        else if (key == "line_resistance_ohms")
            number(ov.line_resistance_ohms);
        else if (key == "settle_tolerance")
            number(ov.settle_tolerance);
        else if (key == "steps_per_switch_period")
            integer(ov.steps_per_switch_period);
        else if (key == "total_cycles")
            integer(ov.total_cycles);
        else if (key == "capture_cycles")
            integer(ov.capture_cycles);
        else
            throw ScenarioError("unknown override key: " + key);
    }
    return ov;
}

std::vector<std::string> scenario_names() {
    std::vector<std::string> names;
    for (const auto& s : registry())
        names.push_back(s.name);
    return names;
}

ScenarioResult run_scenario(const std::string& name, const ScenarioOverrides& overrides) {
    const Scenario* scenario = nullptr;
    for (const auto& s : registry())
        if (s.name == name)
            scenario = &s;
    if (!scenario) {
        std::string known;
        for (const auto& s : registry())
            known += (known.empty() ? "" : ", ") + s.name;
        throw ScenarioError("unknown scenario " + name + " (known: " + known + ")");
    }

    ScenarioResult result;
    result.name = name;
    auto start = std::chrono::steady_clock::now();
    try {
        result.spectra = scenario->build(overrides);
        result.assertions = scenario->check(result.spectra);
    } catch (const ScenarioError&) {
        throw;
    } catch (const std::exception& e) {
        throw ScenarioError("scenario " + name + ": " + e.what());
    }
    result.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

netlist::BuckParams router_params(double fsw_hz) {
    return buck_from(fsw_hz, ScenarioOverrides{});
}

spectral::Spectrum simulate_supply_spectrum(const netlist::Netlist& n,
                                            const engine::SimConfig& config) {
    engine::TransientResult r = engine::run_transient(n, config);
    const std::vector<double>* samples = r.waveforms.signal("i_supply");
    if (!samples)
        throw ScenarioError("netlist has no i_supply probe");
    Spectrum full =
        spectral::spectrum(*samples, r.waveforms.dt_seconds,
                           spectral::Window::rectangular,
                           static_cast<int>(samples->size()));
    return band_limit(full, kBandLoHz, kBandHiHz);
}

spectral::Spectrum band_limit(const spectral::Spectrum& spec, double lo_hz,
                              double hi_hz) {
    if (!(lo_hz < hi_hz))
        throw ScenarioError("band_limit needs lo < hi");
    auto lo_i = static_cast<std::ptrdiff_t>(
        std::ceil((lo_hz - spec.f0_hz) / spec.df_hz - 1e-9));
    auto hi_i = static_cast<std::ptrdiff_t>(
        std::floor((hi_hz - spec.f0_hz) / spec.df_hz + 1e-9));
    lo_i = std::max<std::ptrdiff_t>(lo_i, 0);
    hi_i = std::min<std::ptrdiff_t>(hi_i, static_cast<std::ptrdiff_t>(spec.bins()) - 1);
    if (hi_i - lo_i + 1 < 2)
        throw ScenarioError("band_limit leaves fewer than two bins");

    Spectrum out;
    out.f0_hz = spec.freq_at(static_cast<std::size_t>(lo_i));
    out.df_hz = spec.df_hz;
    out.window = spec.window;
    out.ref_impedance_ohms = spec.ref_impedance_ohms;
    out.source = spec.source;
    out.n_fft = static_cast<int>(hi_i - lo_i + 1);
    out.has_dc_bin = out.f0_hz == 0;
    out.power_dbm.assign(spec.power_dbm.begin() + lo_i, spec.power_dbm.begin() + hi_i + 1);
    return out;
}

spectral::Spectrum apply_sensing_chain(const spectral::Spectrum& spec,
                                       double cutoff_hz) {
    if (!(cutoff_hz > 0))
        throw ScenarioError("sensing chain cutoff must be positive");
    Spectrum out = spec;
    for (std::size_t i = 0; i < out.bins(); ++i) {
        double u = out.freq_at(i) / cutoff_hz;
        double u4 = u * u * u * u;
        double gain = u4 / (1 + u4);
        out.power_dbm[i] += 10 * std::log10(std::max(gain, 1e-30));
    }
    return out;
}

spectral::Spectrum add_background(const spectral::Spectrum& spec, double floor_dbm) {
    Spectrum out = spec;
    const double noise_mw = std::pow(10.0, floor_dbm / 10.0);
    for (auto& p : out.power_dbm)
        p = 10 * std::log10(std::pow(10.0, p / 10.0) + noise_mw);
    return out;
}

spectral::Spectrum add_background(const spectral::Spectrum& spec,
                                  const spectral::Spectrum& background) {
    const double spec_hi = spec.freq_at(spec.bins() - 1);
    const double bg_hi = background.freq_at(background.bins() - 1);
    if (background.f0_hz > spec.f0_hz + 1e-9 || bg_hi < spec_hi - 1e-9)
        throw ScenarioError("background does not cover the signal grid: " +
                            format_double(background.f0_hz) + " to " +
                            format_double(bg_hi) + " vs " + format_double(spec.f0_hz) +
                            " to " + format_double(spec_hi));
    Spectrum aligned = hfed::resample(background, spec.f0_hz, spec.df_hz,
                                      static_cast<int>(spec.bins()));
    Spectrum out = spec;
    for (std::size_t i = 0; i < out.bins(); ++i)
        out.power_dbm[i] = 10 * std::log10(std::pow(10.0, out.power_dbm[i] / 10.0) +
                                           std::pow(10.0, aligned.power_dbm[i] / 10.0));
    return out;
}

std::string result_json(const ScenarioResult& result) {
    nlohmann::ordered_json root;
    root["scenario"] = result.name;
    root["band_hz"] = {kBandLoHz, kBandHiHz};
    root["passed"] = result.all_passed();
    auto spectra = nlohmann::ordered_json::array();
    for (const auto& [name, s] : result.spectra)
        spectra.push_back(name);
    root["spectra"] = spectra;
    auto assertions = nlohmann::ordered_json::array();
    for (const auto& a : result.assertions) {
        nlohmann::ordered_json entry;
        entry["name"] = a.name;
        entry["passed"] = a.passed;
        entry["measured"] = a.measured;
        entry["threshold"] = a.threshold;
        entry["detail"] = a.detail;
        assertions.push_back(entry);
    }
    root["assertions"] = assertions;
    return root.dump(2) + "\n";
}

void export_result(const ScenarioResult& result, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::path dir = fs::path(out_dir) / result.name;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw ScenarioError("cannot create " + dir.string() + ": " + ec.message());

    write_file((dir / "result.json").string(), result_json(result));
    for (const auto& [name, spec] : result.spectra) {
        write_file((dir / (name + ".csv")).string(), spectral::to_csv(spec));
        write_file((dir / (name + ".svg")).string(),
                   svg::spectrum_svg(spec, result.name + " " + name, kBandLoHz,
                                     kBandHiHz));
    }
}

std::vector<ScenarioResult> run_suite(const std::string& out_dir,
                                      const ScenarioOverrides& overrides) {
    std::vector<ScenarioResult> results;
    for (const auto& name : scenario_names()) {
        results.push_back(run_scenario(name, overrides));
        export_result(results.back(), out_dir);
    }
    return results;
}

} // namespace emi::scenarios

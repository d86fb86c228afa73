#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "emi/engine.hpp"
#include "emi/fitting.hpp"
#include "emi/hfed.hpp"
#include "emi/netlist.hpp"
#include "emi/scenarios.hpp"
#include "emi/spectral.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

// End-to-end gate: ten release criteria, one verdict line each.

using namespace emi;
namespace fs = std::filesystem;

namespace {

void report(int number, const std::string& title, bool passed, const std::string& detail) {
    std::cout << "criterion " << number << " [" << title << "]: "
              << (passed ? "PASS" : "FAIL") << " (" << detail << ")\n"
              << std::flush;
    CHECK_MESSAGE(passed, "criterion ", number, ": ", detail);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

spectral::Spectrum router_spectrum(int steps_per_period = 512) {
    engine::SimConfig cfg;
    cfg.steps_per_switch_period = steps_per_period;
    return scenarios::simulate_supply_spectrum(
        netlist::buck_template(scenarios::router_params(100e3)), cfg);
}

// Peak power within half a bin of freq_hz, or the clamp floor when absent.
double peak_value_near(const std::vector<spectral::Peak>& peaks, double freq_hz,
                       double df_hz) {
    for (const auto& p : peaks)
        if (std::abs(p.freq_hz - freq_hz) <= df_hz / 2)
            return p.power_dbm;
    return -200.0;
}

std::string fixed(double v, int digits = 2) {
    std::ostringstream s;
    s.precision(digits);
    s << std::fixed << v;
    return s.str();
}

} // namespace

TEST_CASE("router harmonic comb") {
    auto start = std::chrono::steady_clock::now();
    spectral::Spectrum spec = router_spectrum();
    double elapsed = seconds_since(start);

    auto max_it = std::max_element(spec.power_dbm.begin(), spec.power_dbm.end());
    double dominant_hz = spec.freq_at(
        static_cast<std::size_t>(std::distance(spec.power_dbm.begin(), max_it)));

    auto peaks = spectral::find_peaks(spec, -150.0, 6.0);
    double fundamental = peak_value_near(peaks, 100e3, spec.df_hz);
    int present = 0;
    double worst_tail_drop = 1e9;
    for (int n = 1; n <= 10; ++n) {
        double p = peak_value_near(peaks, n * 100e3, spec.df_hz);
        if (p > -150)
            ++present;
        if (n >= 6)
            worst_tail_drop = std::min(worst_tail_drop, fundamental - p);
    }

    bool ok = std::abs(dominant_hz - 100e3) <= spec.df_hz && present == 10 &&
              worst_tail_drop >= 10 && elapsed < 10;
    report(1, "router harmonic comb", ok,
           "dominant " + fixed(dominant_hz / 1e3, 1) + " kHz, " +
               std::to_string(present) + "/10 harmonics, tail drop >= " +
               fixed(worst_tail_drop, 1) + " dB, " + fixed(elapsed, 2) + " s");
}

TEST_CASE("continuous conduction reference") {
    netlist::BuckParams p;
    p.vsupply_volts = 10;
    p.duty_fraction = 0.5;
    p.fsw_hz = 100e3;
    p.inductance_henries = 100e-6;
    p.capacitance_farads = 100e-6;
    p.load_resistance_ohms = 5;

    netlist::Netlist n = netlist::with_probe(
        netlist::buck_template(p), {"i_l", netlist::ProbeKind::branch_current, "l1"});
    engine::TransientResult r = engine::run_transient(n, engine::SimConfig{});

    const auto& vload = *r.waveforms.signal("v_vload");
    double mean = std::accumulate(vload.begin(), vload.end(), 0.0) /
                  static_cast<double>(vload.size());
    const auto& il = *r.waveforms.signal("i_l");
    double ripple = *std::max_element(il.begin(), il.end()) -
                    *std::min_element(il.begin(), il.end());

    bool ok = r.diagnostics.settled && std::abs(mean - 5.0) <= 0.05 &&
              std::abs(ripple - 0.25) <= 0.005;
    report(2, "continuous conduction reference", ok,
           "mean load " + fixed(mean, 4) + " V vs 5.0 +-1%, ripple " + fixed(ripple, 4) +
               " A vs 0.25 +-2%");
}

TEST_CASE("discontinuous conduction handling") {
    netlist::Netlist n = netlist::with_probe(
        netlist::buck_template(scenarios::router_params(100e3)),
        {"i_l", netlist::ProbeKind::branch_current, "l1"});
    engine::SimConfig cfg;
    engine::TransientResult r = engine::run_transient(n, cfg);

    const auto& il = *r.waveforms.signal("i_l");
    double min_il = *std::min_element(il.begin(), il.end());

    // Every captured period must hold a resting stretch at zero current.
    std::size_t period = static_cast<std::size_t>(cfg.steps_per_switch_period);
    bool every_period_rests = true;
    for (std::size_t base = 0; base + period <= il.size(); base += period) {
        bool rests = false;
        for (std::size_t j = base; j < base + period; ++j)
            if (std::abs(il[j]) < 1e-9)
                rests = true;
        every_period_rests = every_period_rests && rests;
    }

    bool ok = r.diagnostics.settled && min_il >= -1e-9 && every_period_rests &&
              r.diagnostics.max_diode_current_residual_amps < 1e-9 &&
              r.diagnostics.max_diode_voltage_residual_volts < 1e-9;
    report(3, "discontinuous conduction handling", ok,
           "min i_L " + fixed(min_il * 1e9, 3) + " nA, residuals " +
               fixed(r.diagnostics.max_diode_current_residual_amps * 1e9, 3) + " nA / " +
               fixed(r.diagnostics.max_diode_voltage_residual_volts * 1e9, 3) + " nV");
}

TEST_CASE("line impedance attenuation") {
    scenarios::ScenarioResult result = scenarios::run_scenario("line_impedance");

    double min_att = -1, max_att = -1;
    for (const auto& a : result.assertions) {
        if (a.name == "attenuation_nonnegative")
            min_att = a.measured;
        if (a.name == "max_attenuation_in_range")
            max_att = a.measured;
    }

    bool ok = result.all_passed() && min_att >= 0 && max_att > 0 && max_att <= 10;
    report(4, "line impedance attenuation", ok,
           "per-harmonic attenuation in [" + fixed(min_att) + ", " + fixed(max_att) +
               "] dB, bounds [0, 10]");
}

TEST_CASE("coupling cases") {
    scenarios::ScenarioResult result = scenarios::run_scenario("coupling_case3");
    const auto& case1 = result.spectra.at("case1");
    const auto& case2 = result.spectra.at("case2");
    const auto& case3 = result.spectra.at("case3");

    auto peaks1 = spectral::find_peaks(case1, -130.0, 6.0);
    auto labels = spectral::harmonic_families(peaks1, {100e3, 40e3}, 6, case1.df_hz);
    bool diff_found = false, sum_found = false;
    for (const auto& l : labels) {
        if (std::abs(l.peak.freq_hz - 60e3) <= case1.df_hz / 2 && l.m == 1 && l.n == -1)
            diff_found = true;
        if (std::abs(l.peak.freq_hz - 140e3) <= case1.df_hz / 2 && l.m == 1 && l.n == 1)
            sum_found = true;
    }

    double p1 = peak_value_near(peaks1, 100e3, case1.df_hz);
    double p2 = peak_value_near(spectral::find_peaks(case2, -150.0, 6.0), 100e3,
                                case2.df_hz);
    double p3 = peak_value_near(spectral::find_peaks(case3, -150.0, 6.0), 100e3,
                                case3.df_hz);
    bool ordering = p2 + 6 <= p3 && p3 <= p1;

    double family_drop = 1e9;
    int family_teeth = 0;
    for (double f : {40e3, 80e3, 120e3}) {
        double a = spectral::value_at(case1, f);
        if (a < -120)
            continue;
        ++family_teeth;
        family_drop = std::min(family_drop, a - spectral::value_at(case2, f));
    }

    bool ok = result.all_passed() && diff_found && sum_found && ordering &&
              family_teeth > 0 && family_drop >= 10;
    report(5, "coupling cases", ok,
           "inter-harmonics 60/140 kHz " + std::string(diff_found && sum_found ? "present" : "MISSING") +
               ", 100 kHz " + fixed(p2) + " +6 <= " + fixed(p3) + " <= " + fixed(p1) +
               " dBm, 40 kHz family drop >= " + fixed(family_drop, 1) + " dB");
}

TEST_CASE("spectral calibration") {
    using std::numbers::pi;
    const double dt = 1e-6;
    const int n = 4096;

    // Parseval on an uncalibrated multi-tone.
    std::vector<double> multi(n);
    for (int i = 0; i < n; ++i) {
        double t = i * dt;
        multi[i] = 0.3 * std::sin(2 * pi * 300e3 * t + 0.7) +
                   0.1 * std::sin(2 * pi * 757e3 * t) +
                   0.05 * std::cos(2 * pi * 1.1e6 * t) + 0.02;
    }
    spectral::Spectrum mspec =
        spectral::spectrum(multi, dt, spectral::Window::rectangular, n);
    double total_mw = 0;
    for (double dbm : mspec.power_dbm)
        total_mw += std::pow(10.0, dbm / 10.0);
    double ms = std::inner_product(multi.begin(), multi.end(), multi.begin(), 0.0) / n;
    double expected_mw = ms / 50.0 * 1000.0;
    double parseval_rel = std::abs(total_mw - expected_mw) / expected_mw;

    // Bin-centered 0 dBm sinusoid.
    const double amp = std::sqrt(2.0 * 0.001 * 50.0);
    const double f_cal = 1000.0 / (n * dt);
    std::vector<double> cal(n);
    for (int i = 0; i < n; ++i)
        cal[i] = amp * std::sin(2 * pi * f_cal * i * dt + 0.3);
    spectral::Spectrum cspec = spectral::spectrum(cal, dt, spectral::Window::hann, n);
    double cal_dbm = cspec.power_dbm[1000];

    // Square wave odd-harmonic law against a direct transform.
    const int spp = 512, periods = 16, nsq = spp * periods;
    const double dtsq = 1.0 / (spp * 100e3);
    std::vector<double> sq(nsq);
    for (int i = 0; i < nsq; ++i)
        sq[i] = (i % spp) < spp / 2 ? 1.0 : -1.0;
    spectral::Spectrum sspec =
        spectral::spectrum(sq, dtsq, spectral::Window::rectangular, nsq);

    auto brute_dbm = [&](int k) {
        std::complex<double> acc = 0;
        for (int j = 0; j < nsq; ++j)
            acc += sq[j] * std::exp(std::complex<double>(0, -2 * pi * j * k / nsq));
        double a = 2.0 * std::abs(acc) / nsq;
        return 10.0 * std::log10(a * a / 2.0 / 50.0 * 1000.0);
    };
    const int k1 = periods;
    double law_err = 0, oracle_err = 0;
    for (int h = 1; h <= 9; h += 2) {
        double p = sspec.power_dbm[static_cast<std::size_t>(h * k1)];
        law_err = std::max(law_err,
                           std::abs((sspec.power_dbm[k1] - p) - 20 * std::log10(h)));
        oracle_err = std::max(oracle_err, std::abs(p - brute_dbm(h * k1)));
    }

    bool ok = parseval_rel < 1e-3 && std::abs(cal_dbm) < 0.01 && law_err < 0.2 &&
              oracle_err < 1e-6;
    report(6, "spectral calibration", ok,
           "Parseval " + fixed(parseval_rel * 100, 4) + "%, cal tone " + fixed(cal_dbm, 4) +
               " dBm, 1/n law err " + fixed(law_err, 3) + " dB, oracle err " +
               fixed(oracle_err, 9) + " dB");
}

TEST_CASE("grid convergence") {
    spectral::Spectrum coarse = router_spectrum(512);
    spectral::Spectrum fine = router_spectrum(1024);

    double worst = 0;
    for (int n = 1; n <= 10; ++n)
        worst = std::max(worst, std::abs(spectral::value_at(coarse, n * 100e3) -
                                         spectral::value_at(fine, n * 100e3)));

    bool ok = worst < 0.5;
    report(7, "grid convergence", ok,
           "peak shift at half step " + fixed(worst, 3) + " dB over harmonics 1-10");
}

TEST_CASE("fit round trip") {
    auto start = std::chrono::steady_clock::now();
    spectral::Spectrum target = router_spectrum();
    fitting::FitConfig cfg;
    fitting::FitReport fit = fitting::fit_appliance(target, cfg);
    double elapsed = seconds_since(start);

    double fsw_err = std::abs(fit.params.fsw_hz - 100e3);
    bool ok = fsw_err <= target.df_hz && fit.loss_db <= 3.0 && elapsed < 60;
    report(8, "fit round trip", ok,
           "fsw off by " + fixed(fsw_err, 1) + " Hz (bin " + fixed(target.df_hz, 1) +
               "), loss " + fixed(fit.loss_db, 3) + " dB over 60 kHz-2 MHz, " +
               fixed(elapsed, 2) + " s");
}

TEST_CASE("measurement io and catalog") {
    // Synthesized signal-analyzer fixture.
    const int n = hfed::points_for(hfed::Instrument::signal_analyzer);
    hfed::MeasuredTrace trace;
    trace.instrument = hfed::Instrument::signal_analyzer;
    trace.setup = hfed::Setup::lab_setup3;
    trace.appliance_label = "LED Lamp-2";
    trace.timestamp = "2021-03-04T10:20:30Z";
    trace.spectrum.f0_hz = hfed::kMinFreqHz;
    trace.spectrum.df_hz = (hfed::kMaxFreqHz - hfed::kMinFreqHz) / (n - 1);
    trace.spectrum.n_fft = n;
    trace.spectrum.source = spectral::Source::measured;
    trace.spectrum.power_dbm.resize(n);
    for (int i = 0; i < n; ++i)
        trace.spectrum.power_dbm[i] = -90.0 + 20.0 * std::sin(0.001 * i);
    hfed::validate(trace);

    bool round_trip = hfed::read_trace(hfed::write_trace(trace)) == trace;

    bool point_count_rejected = false;
    hfed::MeasuredTrace wrong = trace;
    wrong.instrument = hfed::Instrument::usrp;
    try {
        hfed::validate(wrong);
    } catch (const hfed::HfedError& e) {
        point_count_rejected =
            std::string(e.what()).find("point-count mismatch") != std::string::npos;
    }

    struct Expected {
        const char* name;
        const char* brand;
        hfed::Category category;
        std::vector<double> watts;
        std::vector<hfed::Location> locations;
    };
    using enum hfed::Location;
    const std::vector<Expected> expected = {
        {"CFL1", "Crompton Greaves", hfed::Category::smps, {18}, {lab, home}},
        {"CFL2", "Bajaj", hfed::Category::smps, {15}, {lab, home}},
        {"CFL3", "Bajaj", hfed::Category::smps, {15}, {lab, home}},
        {"CFL4", "Bajaj", hfed::Category::smps, {5}, {lab, home}},
        {"LED Lamp-1", "Genre India", hfed::Category::smps, {5}, {lab, home}},
        {"LED Lamp-2", "Unbranded", hfed::Category::smps, {3}, {lab, home}},
        {"LED Lamp-3", "Crompton Greaves", hfed::Category::smps, {0.5}, {lab, home}},
        {"Laptop Charger-1", "Dell", hfed::Category::smps, {90}, {lab, home}},
        {"Laptop Charger-2", "HP", hfed::Category::smps, {65}, {lab, home}},
        {"Phone Charger-1", "Samsung", hfed::Category::smps, {5}, {lab, home}},
        {"Phone Charger-2", "Asus", hfed::Category::smps, {7}, {lab, home}},
        {"Phone Charger-3", "LG", hfed::Category::smps, {6}, {lab, home}},
        {"LCD Monitor", "HP P191", hfed::Category::smps, {20}, {lab, home}},
        {"Printer", "HP P1007", hfed::Category::smps, {5}, {lab, home}},
        {"Speakers", "Harman Kardon", hfed::Category::smps, {24}, {lab, home}},
        {"Modem", "Asus Router", hfed::Category::smps, {18}, {lab, home}},
        {"Induction Cooktop-1", "Philips", hfed::Category::smps, {500, 1300}, {lab, home}},
        {"Induction Cooktop-2", "Maharaja Whiteline", hfed::Category::smps, {600, 1000},
         {lab, home}},
        {"Microwave", "Kenstar", hfed::Category::unknown, {1250}, {home}},
        {"Refrigerator", "LG", hfed::Category::non_smps, {1020}, {home}},
        {"Blender", "Inalsa", hfed::Category::non_smps, {180}, {lab, home}},
        {"Iron", "Philips", hfed::Category::non_smps, {535}, {lab}},
        {"Room Heater", "North Star", hfed::Category::non_smps, {1500}, {lab}},
        {"Television", "LG", hfed::Category::smps, {60}, {home}},
    };
    const auto& cat = hfed::catalog();
    bool catalog_ok = cat.size() == expected.size();
    int mismatches = 0;
    for (std::size_t i = 0; catalog_ok && i < expected.size(); ++i) {
        const auto& e = expected[i];
        const auto& c = cat[i];
        if (c.name != e.name || c.brand != e.brand || c.category != e.category ||
            c.power_watts != e.watts || c.locations != e.locations) {
            catalog_ok = false;
            ++mismatches;
        }
    }

    bool ok = round_trip && point_count_rejected && catalog_ok;
    report(9, "measurement io and catalog", ok,
           std::string("round trip ") + (round_trip ? "identical" : "DIFFERS") +
               ", point-count mismatch " +
               (point_count_rejected ? "rejected" : "ACCEPTED") + ", catalog " +
               std::to_string(cat.size()) + "/24 entries" +
               (catalog_ok ? " exact" : " WRONG"));
}

TEST_CASE("suite determinism") {
    fs::path base = fs::temp_directory_path() / "emi_acceptance_suite";
    fs::path a = base / "a";
    fs::path b = base / "b";
    fs::remove_all(base);

    scenarios::run_suite(a.string());
    scenarios::run_suite(b.string());

    auto tree = [](const fs::path& root) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(root))
            if (entry.is_regular_file())
                files.push_back(fs::relative(entry.path(), root));
        std::sort(files.begin(), files.end());
        return files;
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    };

    auto files_a = tree(a);
    auto files_b = tree(b);
    bool ok = !files_a.empty() && files_a == files_b;
    int compared = 0;
    for (const auto& rel : files_a) {
        if (!ok)
            break;
        ok = slurp(a / rel) == slurp(b / rel);
        ++compared;
    }
    report(10, "suite determinism", ok,
           std::to_string(files_a.size()) + " files, " + std::to_string(compared) +
               " compared byte-identical across two runs");
}

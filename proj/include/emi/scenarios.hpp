#pragma once

#include "emi/engine.hpp"
#include "emi/netlist.hpp"
#include "emi/spectral.hpp"

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace emi::scenarios {

struct ScenarioError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Analysis band shared by all scenarios.
inline constexpr double kBandLoHz = 10e3;
inline constexpr double kBandHiHz = 5e6;

struct ScenarioOverrides {
    std::optional<double> vsupply_volts;
    std::optional<double> duty_fraction;
    std::optional<double> fsw_hz;
    std::optional<double> inductance_henries;
    std::optional<double> capacitance_farads;
    std::optional<double> load_resistance_ohms;
    std::optional<double> esr_l_ohms;
    std::optional<double> esr_c_ohms;
    std::optional<double> line_resistance_ohms;
    std::optional<int> steps_per_switch_period;
    std::optional<int> total_cycles;
    std::optional<int> capture_cycles;
    std::optional<double> settle_tolerance;

    static ScenarioOverrides from_json(const std::string& text);
    bool operator==(const ScenarioOverrides&) const = default;
};

struct AssertionOutcome {
    std::string name;
    bool passed = false;
    double measured = 0;
    double threshold = 0;
    std::string detail;

    bool operator==(const AssertionOutcome&) const = default;
};

struct ScenarioResult {
    std::string name;
    std::map<std::string, spectral::Spectrum> spectra;
    std::vector<AssertionOutcome> assertions;
    double runtime_seconds = 0; // in-memory only, never exported

    bool all_passed() const;
};

std::vector<std::string> scenario_names();
ScenarioResult run_scenario(const std::string& name,
                            const ScenarioOverrides& overrides = {});

// Buck parameters for the modeled router-class appliance at a given switching
// frequency: 0.05 V supply, 0.5 duty, load 1 kohm; L and C from the ripple
// design equations, which give 2.5 uH and 5 uF at 100 kHz.
netlist::BuckParams router_params(double fsw_hz);

// Transient run of the netlist followed by a spectrum of the i_supply probe,
// restricted to the analysis band.
spectral::Spectrum simulate_supply_spectrum(const netlist::Netlist& netlist,
                                            const engine::SimConfig& config);

// Sub-spectrum covering [lo_hz, hi_hz].
spectral::Spectrum band_limit(const spectral::Spectrum& spec, double lo_hz,
                              double hi_hz);

// Measurement-path high-pass: second-order Butterworth response applied in dB.
spectral::Spectrum apply_sensing_chain(const spectral::Spectrum& spec,
                                       double cutoff_hz = 60e3);

// Power-domain noise addition: white floor per bin, or a measured background
// spectrum resampled onto the signal grid.
spectral::Spectrum add_background(const spectral::Spectrum& spec, double floor_dbm);
spectral::Spectrum add_background(const spectral::Spectrum& spec,
                                  const spectral::Spectrum& background);

// result.json (runtime excluded) plus one CSV and one SVG per named spectrum,
// under out_dir/<scenario name>/.
std::string result_json(const ScenarioResult& result);
void export_result(const ScenarioResult& result, const std::string& out_dir);

// Runs every registered scenario and exports each into out_dir.
std::vector<ScenarioResult> run_suite(const std::string& out_dir,
                                      const ScenarioOverrides& overrides = {});

} // namespace emi::scenarios

#pragma once

// Fixed-step transient simulator for piecewise-linear switched circuits.
//
// Formulation: modified nodal analysis. Unknowns are the non-ground node
// voltages plus one branch current per source, switch and diode. Inductors
// and capacitors enter through trapezoidal companion models; the step right
// after any switch or diode state change falls back to backward Euler for
// that step, which keeps ideal-diode current clamping free of trapezoidal
// ringing. Each distinct (switch states, diode states, rule) combination is
// factorized once and cached.

#include "emi/netlist.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace emi::engine {

struct EngineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Linear system has no unique solution for a reachable topology state.
struct SingularSystemError : EngineError {
    using EngineError::EngineError;
};

// Diode states failed to reach a fixed point within the per-step budget.
struct DiodeOscillationError : EngineError {
    using EngineError::EngineError;
};

// Switch frequencies are not rational multiples of each other.
struct IncommensurateFrequencies : EngineError {
    using EngineError::EngineError;
};

struct SimConfig {
    int steps_per_switch_period = 512; // per fastest switch period
    std::optional<double> dt_seconds;  // overrides steps_per_switch_period; snapped
                                       // so the fastest period stays grid-aligned
    int total_cycles = 20000;          // budget of common periods before giving up
    double settle_tolerance = 1e-6;    // relative RMS between consecutive cycles
    int capture_cycles = 16;           // steady-state cycles kept in the output
    int max_diode_flips_per_step = 4;

    friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

void validate(const SimConfig& cfg);

struct Waveforms {
    double dt_seconds = 0;
    double t0_seconds = 0;
    double switch_period_seconds = 0; // common period of all switches
    std::vector<std::string> names;   // probe declaration order
    std::vector<std::vector<double>> signals; // parallel to names

    const std::vector<double>* signal(const std::string& name) const;
    std::size_t samples() const { return signals.empty() ? 0 : signals.front().size(); }

    friend bool operator==(const Waveforms&, const Waveforms&) = default;
};

// Header `t_s,<probe...>`, one row per sample, shortest round-trip doubles.
std::string to_csv(const Waveforms& w);

struct SimDiagnostics {
    bool settled = false;
    std::int64_t settle_cycle = -1; // first cycle within tolerance of its predecessor
    bool steady_state_warning = false;

    // Largest complementarity residuals over all accepted steps: negative
    // current through a conducting diode, forward voltage across a blocking one.
    double max_diode_current_residual_amps = 0;
    double max_diode_voltage_residual_volts = 0;

    double duty_quantization_error = 0; // worst |realized on-fraction - duty|
    std::int64_t backward_euler_steps = 0;
    std::int64_t total_steps = 0;

    // Energy bookkeeping over the captured window.
    double mean_source_power_watts = 0;
    double mean_resistor_power_watts = 0;

    int topology_state_count = 0;
    int switch_count = 0;
    int diode_count = 0;
};

struct TransientResult {
    Waveforms waveforms;
    SimDiagnostics diagnostics;
};

// Least common multiple of all switch periods. Frequencies within 1e-9
// relative tolerance of a rational ratio are treated as exactly rational;
// anything else throws IncommensurateFrequencies. A switchless netlist has
// no period and throws EngineError.
double common_period(const netlist::Netlist& n);

// First index k >= 1 with rms(cycles[k] - cycles[k-1]) < tol * max(rms(cycles[k]), 1e-12).
// Each entry is one cycle's state samples flattened to a vector.
std::optional<std::size_t> detect_steady_state(const std::vector<Eigen::VectorXd>& cycles,
                                               double settle_tolerance);

TransientResult run_transient(const netlist::Netlist& n, const SimConfig& cfg);

} // namespace emi::engine

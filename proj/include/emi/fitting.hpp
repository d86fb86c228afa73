#pragma once

#include "emi/netlist.hpp"
#include "emi/spectral.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace emi::fitting {

struct FittingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The spectrum has no harmonic comb standing clear of its floor.
struct NoCombFound : FittingError {
    using FittingError::FittingError;
};

struct FitConfig {
    // Fundamental search range for the comb scan.
    double fsw_lo_hz = 20e3;
    double fsw_hi_hz = 1e6;
    int max_harmonics = 8;
    double comb_significance_db = 10;

    // Band the loss is evaluated over.
    double band_lo_hz = 60e3;
    double band_hi_hz = 2e6;

    // Coordinate descent controls.
    int max_iterations = 3;
    double convergence_tol_db = 0.05;
    std::vector<double> grid_factors = {0.25, 0.5, 0.70710678118654752, 1.0,
                                        1.4142135623730951, 2.0, 4.0};
    std::optional<double> duty_fraction; // fixed at 0.5 unless set

    // Candidate simulation settings, matching the engine defaults so a target
    // produced by the same pipeline is reproduced bit for bit.
    int steps_per_switch_period = 512;
    int total_cycles = 20000;
    int capture_cycles = 16;
    double settle_tolerance = 1e-6;

    void validate() const;
};

struct StageRecord {
    std::string stage;
    netlist::BuckParams params;
    double loss_db = 0;

    bool operator==(const StageRecord&) const = default;
};

struct MatchedPeak {
    double freq_hz = 0;
    double target_dbm = 0;
    double model_dbm = 0;

    bool operator==(const MatchedPeak&) const = default;
};

struct FitReport {
    netlist::BuckParams params;
    double loss_db = 0;
    std::vector<StageRecord> trace;
    std::vector<MatchedPeak> matched_peaks;
    std::vector<std::string> notes;
};

// Fundamental switching frequency via a harmonic-comb scan at bin resolution,
// refined by parabolic interpolation. Throws NoCombFound when the best comb
// does not stand comb_significance_db above the in-band median.
double estimate_fsw(const spectral::Spectrum& spec, const FitConfig& config = {});

// Staged recovery of appliance parameters whose simulated supply-current
// spectrum matches the target.
FitReport fit_appliance(const spectral::Spectrum& target, const FitConfig& config = {});

// Loss of a specific parameter set against the target, on the same bins
// fit_appliance uses.
double evaluate_loss(const netlist::BuckParams& params, const spectral::Spectrum& target,
                     const FitConfig& config = {});

std::string report_json(const FitReport& report);

} // namespace emi::fitting

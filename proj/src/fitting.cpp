#include "emi/fitting.hpp"

#include "emi/engine.hpp"
#include "emi/numbers.hpp"
#include "emi/scenarios.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

namespace emi::fitting {

namespace {

using netlist::BuckParams;
using spectral::Spectrum;

constexpr double kRippleCurrentAmps = 0.05;
constexpr double kRippleVoltageVolts = 0.0125;
constexpr double kInitialVsupplyVolts = 0.05;
constexpr double kInitialLoadOhms = 1000;
constexpr double kInitialEsrLOhms = 0.05;
constexpr double kInitialEsrCOhms = 0.02;
constexpr double kMaxValue = 1e6;

std::size_t nearest_bin(const Spectrum& s, double f) {
    auto k = static_cast<std::ptrdiff_t>(std::llround((f - s.f0_hz) / s.df_hz));
    k = std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(s.bins()) - 1);
    return static_cast<std::size_t>(k);
}

double comb_score(const Spectrum& s, double f, int max_harmonics, double f_hi) {
    double sum = 0;
    int teeth = 0;
    for (int n = 1; n <= max_harmonics; ++n) {
        double fn = n * f;
        if (fn > f_hi)
            break;
        sum += s.power_dbm[nearest_bin(s, fn)];
        ++teeth;
    }
    if (teeth < 2)
        return -std::numeric_limits<double>::infinity();
    return sum / teeth;
}

double band_median(const Spectrum& s, double lo, double hi) {
    std::vector<double> in_band;
    for (std::size_t i = 0; i < s.bins(); ++i)
        if (s.freq_at(i) >= lo && s.freq_at(i) <= hi)
            in_band.push_back(s.power_dbm[i]);
    if (in_band.empty())
        throw FittingError("band lies outside the spectrum coverage");
    std::nth_element(in_band.begin(), in_band.begin() + in_band.size() / 2,
                     in_band.end());
    return in_band[in_band.size() / 2];
}

std::vector<spectral::Peak> target_peaks(const Spectrum& target, const FitConfig& cfg) {
    const double lo = std::max(cfg.band_lo_hz, target.f0_hz);
    const double hi = std::min(cfg.band_hi_hz, target.freq_at(target.bins() - 1));
    if (!(lo < hi))
        throw FittingError("loss band lies outside the target coverage");
    const double median = band_median(target, lo, hi);
    std::vector<spectral::Peak> peaks;
    for (const auto& p : spectral::find_peaks(target, median + 6, 6))
        if (p.freq_hz >= lo && p.freq_hz <= hi)
            peaks.push_back(p);
    return peaks;
}

// Bins the loss is summed over: every target peak in band plus a uniform
// baseline sample.
std::vector<double> loss_frequencies(const Spectrum& target, const FitConfig& cfg) {
    const double lo = std::max(cfg.band_lo_hz, target.f0_hz);
    const double hi = std::min(cfg.band_hi_hz, target.freq_at(target.bins() - 1));

    std::vector<double> freqs;
    for (const auto& p : target_peaks(target, cfg))
        freqs.push_back(p.freq_hz);

    const auto first = nearest_bin(target, lo);
    const auto last = nearest_bin(target, hi);
    const std::size_t stride = std::max<std::size_t>(1, (last - first) / 64);
    for (std::size_t i = first; i <= last; i += stride)
        freqs.push_back(target.freq_at(i));

    std::sort(freqs.begin(), freqs.end());
    freqs.erase(std::unique(freqs.begin(), freqs.end()), freqs.end());
    return freqs;
}

engine::SimConfig sim_config(const FitConfig& cfg) {
    engine::SimConfig sim;
    sim.steps_per_switch_period = cfg.steps_per_switch_period;
    sim.total_cycles = cfg.total_cycles;
    sim.capture_cycles = cfg.capture_cycles;
    sim.settle_tolerance = cfg.settle_tolerance;
    return sim;
}

double loss_over(const Spectrum& target, const Spectrum& model,
                 const std::vector<double>& freqs) {
    double acc = 0;
    for (double f : freqs) {
        double d = spectral::value_at(target, f) - spectral::value_at(model, f);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(freqs.size()));
}

std::string param_key(const BuckParams& p) {
    return format_double(p.vsupply_volts) + '|' + format_double(p.load_resistance_ohms) +
           '|' + format_double(p.esr_l_ohms) + '|' + format_double(p.esr_c_ohms);
}

Spectrum simulate(const BuckParams& params, const FitConfig& cfg) {
    return scenarios::simulate_supply_spectrum(netlist::buck_template(params),
                                               sim_config(cfg));
}

struct Evaluator {
    const Spectrum& target;
    const FitConfig& cfg;
    std::vector<double> freqs;
    std::map<std::string, double> memo;
    std::vector<std::string>* notes = nullptr;

    double operator()(const BuckParams& params) {
        auto key = param_key(params);
        if (auto it = memo.find(key); it != memo.end())
            return it->second;
        double loss;
        try {
            loss = loss_over(target, simulate(params, cfg), freqs);
        } catch (const std::exception& e) {
            if (notes)
                notes->push_back("candidate " + key + " failed: " + e.what());
            loss = std::numeric_limits<double>::infinity();
        }
        memo.emplace(std::move(key), loss);
        return loss;
    }
};

nlohmann::ordered_json params_json(const BuckParams& p) {
    nlohmann::ordered_json j;
    j["vsupply_volts"] = p.vsupply_volts;
    j["duty_fraction"] = p.duty_fraction;
    j["fsw_hz"] = p.fsw_hz;
    j["inductance_henries"] = p.inductance_henries;
    j["capacitance_farads"] = p.capacitance_farads;
    j["load_resistance_ohms"] = p.load_resistance_ohms;
    j["esr_l_ohms"] = p.esr_l_ohms;
    j["esr_c_ohms"] = p.esr_c_ohms;
    j["line_resistance_ohms"] = p.line_resistance_ohms;
    return j;
}

} // namespace

void FitConfig::validate() const {
    if (!(fsw_lo_hz > 0) || !(fsw_hi_hz > fsw_lo_hz))
        throw FittingError("fsw search band must be increasing and positive");
    if (max_harmonics < 2)
        throw FittingError("comb needs at least two harmonics");
    if (!(band_lo_hz > 0) || !(band_hi_hz > band_lo_hz))
        throw FittingError("loss band must be increasing and positive");
    if (max_iterations < 1)
        throw FittingError("max_iterations must be at least 1");
    if (grid_factors.empty())
        throw FittingError("grid_factors must not be empty");
    for (double g : grid_factors)
        if (!(g > 0) || !std::isfinite(g))
            throw FittingError("grid factors must be positive and finite");
    if (duty_fraction && !(*duty_fraction > 0 && *duty_fraction < 1))
        throw FittingError("duty override must lie in (0, 1)");
}

double estimate_fsw(const Spectrum& spec, const FitConfig& cfg) {
    cfg.validate();
    const double f_last = spec.freq_at(spec.bins() - 1);
    const double lo = std::max(cfg.fsw_lo_hz, std::max(spec.f0_hz, spec.df_hz));
    const double hi = std::min(cfg.fsw_hi_hz, f_last);
    if (!(lo < hi))
        throw FittingError("fsw search band lies outside the spectrum coverage");

    const double median = band_median(spec, lo, hi);
    const auto first = nearest_bin(spec, lo);
    const auto last = nearest_bin(spec, hi);
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t best_bin = first;
    for (std::size_t k = first; k <= last; ++k) {
        double score = comb_score(spec, spec.freq_at(k), cfg.max_harmonics, f_last);
        if (score > best_score) {
            best_score = score;
            best_bin = k;
        }
    }
    if (!(best_score >= median + cfg.comb_significance_db))
        throw NoCombFound("best harmonic comb at " +
                          format_double(spec.freq_at(best_bin)) + " Hz scores " +
                          format_double(best_score) + " dBm against a " +
                          format_double(median) + " dBm floor");

    double refined = spec.freq_at(best_bin);
    if (best_bin > first && best_bin < last) {
        double s_minus =
            comb_score(spec, spec.freq_at(best_bin - 1), cfg.max_harmonics, f_last);
        double s_plus =
            comb_score(spec, spec.freq_at(best_bin + 1), cfg.max_harmonics, f_last);
        double denom = s_minus - 2 * best_score + s_plus;
        if (std::isfinite(s_minus) && std::isfinite(s_plus) && denom < 0) {
            double delta = 0.5 * (s_minus - s_plus) / denom;
            delta = std::clamp(delta, -0.5, 0.5);
            refined += delta * spec.df_hz;
        }
    }
    return refined;
}

double evaluate_loss(const BuckParams& params, const Spectrum& target,
                     const FitConfig& cfg) {
    cfg.validate();
    Evaluator eval{target, cfg, loss_frequencies(target, cfg)};
    return eval(params);
}

FitReport fit_appliance(const Spectrum& target, const FitConfig& cfg) {
    cfg.validate();
    FitReport report;

    const double fsw = estimate_fsw(target, cfg);
    const double duty = cfg.duty_fraction.value_or(0.5);

    BuckParams params;
    params.fsw_hz = fsw;
    params.duty_fraction = duty;
    params.vsupply_volts = kInitialVsupplyVolts;
    params.load_resistance_ohms = kInitialLoadOhms;
    params.esr_l_ohms = kInitialEsrLOhms;
    params.esr_c_ohms = kInitialEsrCOhms;
    params.inductance_henries =
        duty * (1 - duty) * params.vsupply_volts / (kRippleCurrentAmps * fsw);
    params.capacitance_farads = kRippleCurrentAmps / (8 * fsw * kRippleVoltageVolts);

    Evaluator eval{target, cfg, loss_frequencies(target, cfg), {}, &report.notes};

    double loss = eval(params);
    if (!std::isfinite(loss))
        throw FittingError("initial parameter set fails to simulate");
    report.trace.push_back({"comb_fsw", params, loss});
    report.trace.push_back({"design_lc", params, loss});

    const std::array<std::pair<const char*, double BuckParams::*>, 4> axes = {{
        {"vsupply_volts", &BuckParams::vsupply_volts},
        {"load_resistance_ohms", &BuckParams::load_resistance_ohms},
        {"esr_l_ohms", &BuckParams::esr_l_ohms},
        {"esr_c_ohms", &BuckParams::esr_c_ohms},
    }};

    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        const double sweep_start = loss;
        for (const auto& [axis, field] : axes) {
            BuckParams best = params;
            double best_loss = loss;
            for (double g : cfg.grid_factors) {
                BuckParams cand = params;
                cand.*field = params.*field * g;
                if (!(cand.*field > 0) || !std::isfinite(cand.*field) ||
                    cand.*field > kMaxValue)
                    continue;
                double cand_loss = eval(cand);
                if (cand_loss < best_loss - 1e-12) {
                    best_loss = cand_loss;
                    best = cand;
                }
            }
            params = best;
            loss = best_loss;
            report.trace.push_back({std::string("descent_") + axis, params, loss});
        }
        if (sweep_start - loss < cfg.convergence_tol_db)
            break;
    }

    if (!std::isfinite(loss))
        throw FittingError("every candidate simulation failed");

    report.params = params;
    report.loss_db = loss;

    Spectrum model = simulate(params, cfg);
    for (const auto& p : target_peaks(target, cfg))
        report.matched_peaks.push_back(
            {p.freq_hz, p.power_dbm, spectral::value_at(model, p.freq_hz)});
    return report;
}

std::string report_json(const FitReport& report) {
    nlohmann::ordered_json root;
    root["params"] = params_json(report.params);
    root["loss_db"] = report.loss_db;
    auto trace = nlohmann::ordered_json::array();
    for (const auto& s : report.trace) {
        nlohmann::ordered_json entry;
        entry["stage"] = s.stage;
        entry["loss_db"] = s.loss_db;
        entry["params"] = params_json(s.params);
        trace.push_back(entry);
    }
    root["trace"] = trace;
    auto peaks = nlohmann::ordered_json::array();
    for (const auto& p : report.matched_peaks) {
        nlohmann::ordered_json entry;
        entry["freq_hz"] = p.freq_hz;
        entry["target_dbm"] = p.target_dbm;
        entry["model_dbm"] = p.model_dbm;
        peaks.push_back(entry);
    }
    root["matched_peaks"] = peaks;
    root["notes"] = report.notes;
    return root.dump(2) + "\n";
}

} // namespace emi::fitting

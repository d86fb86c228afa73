#pragma once

// Calibrated one-sided power spectra in dBm and the analysis passes built on
// them: peak picking, harmonic / inter-harmonic labeling, spectrum comparison.

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace emi::spectral {

struct SpectralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Frequency coverage of the two spectra (restricted to the requested band)
// does not overlap.
struct DisjointBands : SpectralError {
    using SpectralError::SpectralError;
};

enum class Window { rectangular, hann };
enum class Source { simulated, measured };

struct Spectrum {
    double f0_hz = 0;
    double df_hz = 0;
    std::vector<double> power_dbm;
    Window window = Window::rectangular;
    double ref_impedance_ohms = 50;
    Source source = Source::simulated;
    int n_fft = 0;
    bool has_dc_bin = false; // bin 0 is DC: reported, skipped by find_peaks

    double freq_at(std::size_t bin) const { return f0_hz + static_cast<double>(bin) * df_hz; }
    std::size_t bins() const { return power_dbm.size(); }

    friend bool operator==(const Spectrum&, const Spectrum&) = default;
};

// One-sided spectrum of the first n_fft samples. Each bin holds the power, in
// dBm, that a sinusoid of that bin's amplitude would dissipate in
// ref_impedance (DC and Nyquist bins use their undoubled amplitude). Window
// gains are corrected so a bin-centered sinusoid reads the same under either
// window. Empty bins are clamped at floor_dbm.
Spectrum spectrum(const std::vector<double>& samples, double dt_seconds, Window window,
                  int n_fft, double ref_impedance_ohms = 50.0, double floor_dbm = -200.0);

struct Peak {
    double freq_hz = 0;
    double power_dbm = 0;
    int bin_index = 0;
    double prominence_db = 0;

    friend bool operator==(const Peak&, const Peak&) = default;
};

// Local maxima above floor_dbm with at least min_prominence_db of prominence,
// in frequency order. The DC bin never qualifies.
std::vector<Peak> find_peaks(const Spectrum& spec, double floor_dbm,
                             double min_prominence_db = 6.0);

struct HarmonicLabel {
    Peak peak;
    int m = 0; // multiplier of base_freqs[0]
    int n = 0; // multiplier of base_freqs[1], 0 for single-base labeling

    friend bool operator==(const HarmonicLabel&, const HarmonicLabel&) = default;
};

// Labels each peak with the lowest-order combination m*f1 + n*f2 that lands
// within half a bin of it; peaks with no match within max_order are omitted.
// The signed combination is canonicalized to be positive.
std::vector<HarmonicLabel> harmonic_families(const std::vector<Peak>& peaks,
                                             const std::vector<double>& base_freqs,
                                             int max_order, double df_hz);

struct CompareResult {
    double log_spectral_distance_db = 0; // RMS dB difference over the band
    double peak_match_fraction = 0;      // of a's peaks found again in b
    std::vector<std::pair<double, double>> per_peak_delta_db; // (freq, b - a)
};

// Compares two spectra over [band_lo_hz, band_hi_hz]. Both are evaluated on
// the finer of the two grids (dB-linear interpolation), which keeps the
// distance symmetric. Throws DisjointBands when the overlap is empty.
CompareResult compare_spectra(const Spectrum& a, const Spectrum& b, double band_lo_hz,
                              double band_hi_hz);

// Interpolated dB value at an arbitrary frequency inside the coverage.
double value_at(const Spectrum& spec, double freq_hz);

// CSV with `#key=value` metadata lines, then `freq_hz,power_dbm` rows.
std::string to_csv(const Spectrum& spec);
Spectrum from_csv(const std::string& text);

} // namespace emi::spectral

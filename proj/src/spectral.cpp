#include "emi/spectral.hpp"

#include "emi/numbers.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <sstream>

namespace emi::spectral {

namespace {

double to_dbm(double watts, double floor_dbm) {
    if (!(watts > 0))
        return floor_dbm;
    double dbm = 10.0 * std::log10(watts / 1e-3);
    return std::max(dbm, floor_dbm);
}

double window_value(Window w, std::size_t n, std::size_t size) {
    if (w == Window::rectangular)
        return 1.0;
    // Periodic Hann: coherent gain exactly 1/2.
    return 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(n) /
                                 static_cast<double>(size)));
}

double coherent_gain(Window w) { return w == Window::rectangular ? 1.0 : 0.5; }

const char* window_name(Window w) { return w == Window::rectangular ? "rectangular" : "hann"; }
const char* source_name(Source s) { return s == Source::simulated ? "simulated" : "measured"; }

} // namespace

Spectrum spectrum(const std::vector<double>& samples, double dt_seconds, Window window,
                  int n_fft, double ref_impedance_ohms, double floor_dbm) {
    if (n_fft < 2)
        throw SpectralError("n_fft must be at least 2");
    if (static_cast<std::size_t>(n_fft) > samples.size())
        throw SpectralError("n_fft exceeds the sample count");
    if (!(dt_seconds > 0))
        throw SpectralError("dt must be positive");
    if (!(ref_impedance_ohms > 0))
        throw SpectralError("reference impedance must be positive");

    const std::size_t n = static_cast<std::size_t>(n_fft);
    std::vector<double> windowed(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(samples[i]))
            throw SpectralError("non-finite sample at index " + std::to_string(i));
        windowed[i] = samples[i] * window_value(window, i, n);
    }

    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> bins;
    fft.fwd(bins, windowed);

    const double cg = coherent_gain(window);
    const std::size_t half = n / 2;
    Spectrum out;
    out.f0_hz = 0;
    out.df_hz = 1.0 / (static_cast<double>(n) * dt_seconds);
    out.window = window;
    out.ref_impedance_ohms = ref_impedance_ohms;
    out.n_fft = n_fft;
    out.has_dc_bin = true;
    out.power_dbm.resize(half + 1);
    for (std::size_t k = 0; k <= half; ++k) {
        const bool undoubled = k == 0 || (n % 2 == 0 && k == half);
        double amplitude = (undoubled ? 1.0 : 2.0) * std::abs(bins[k]) /
                           (static_cast<double>(n) * cg);
        double watts = undoubled ? amplitude * amplitude / ref_impedance_ohms
                                 : amplitude * amplitude / (2.0 * ref_impedance_ohms);
        out.power_dbm[k] = to_dbm(watts, floor_dbm);
    }
    return out;
}

std::vector<Peak> find_peaks(const Spectrum& spec, double floor_dbm,
                             double min_prominence_db) {
    std::vector<Peak> peaks;
    const auto& p = spec.power_dbm;
    if (p.size() < 3)
        return peaks;
    const std::size_t first = spec.has_dc_bin ? 1 : 0;
    for (std::size_t i = std::max<std::size_t>(first, 1); i + 1 < p.size(); ++i) {
        if (!(p[i] > p[i - 1] && p[i] > p[i + 1]))
            continue;
        if (p[i] <= floor_dbm)
            continue;
        // Prominence: drop to the lowest saddle separating this maximum from
        // higher ground on each side.
        double left_base = p[i];
        for (std::size_t j = i; j-- > first;) {
            if (p[j] > p[i]) {
                break;
            }
            left_base = std::min(left_base, p[j]);
        }
        double right_base = p[i];
        for (std::size_t j = i + 1; j < p.size(); ++j) {
            if (p[j] > p[i])
                break;
            right_base = std::min(right_base, p[j]);
        }
        double prominence = p[i] - std::max(left_base, right_base);
        if (prominence < min_prominence_db)
            continue;
        peaks.push_back({spec.freq_at(i), p[i], static_cast<int>(i), prominence});
    }
    return peaks;
}

std::vector<HarmonicLabel> harmonic_families(const std::vector<Peak>& peaks,
                                             const std::vector<double>& base_freqs,
                                             int max_order, double df_hz) {
    if (base_freqs.empty() || base_freqs.size() > 2)
        throw SpectralError("harmonic labeling takes one or two base frequencies");
    for (double f : base_freqs)
        if (!(f > 0))
            throw SpectralError("base frequencies must be positive");

    const double f1 = base_freqs[0];
    const double f2 = base_freqs.size() == 2 ? base_freqs[1] : 0;
    const double half_bin = df_hz / 2;

    std::vector<HarmonicLabel> labels;
    for (const Peak& peak : peaks) {
        bool found = false;
        int best_m = 0, best_n = 0;
        auto better = [&](int m, int n) {
            if (!found)
                return true;
            int order = std::abs(m) + std::abs(n);
            int best_order = std::abs(best_m) + std::abs(best_n);
            if (order != best_order)
                return order < best_order;
            if (std::abs(m) != std::abs(best_m))
                return std::abs(m) < std::abs(best_m);
            return std::make_pair(m, n) > std::make_pair(best_m, best_n);
        };
        auto consider = [&](int m, int n) {
            double f = m * f1 + n * f2;
            if (!(f > 0))
                return;
            if (std::abs(f - peak.freq_hz) > half_bin)
                return;
            if (better(m, n)) {
                best_m = m;
                best_n = n;
                found = true;
            }
        };
        if (base_freqs.size() == 1) {
            for (int m = 1; m <= max_order; ++m)
                consider(m, 0);
        } else {
            for (int m = -max_order; m <= max_order; ++m)
                for (int n = -max_order; n <= max_order; ++n)
                    if ((m != 0 || n != 0) && std::abs(m) + std::abs(n) <= max_order)
                        consider(m, n);
        }
        if (found)
            labels.push_back({peak, best_m, best_n});
    }
    return labels;
}

double value_at(const Spectrum& spec, double freq_hz) {
    if (spec.bins() == 0)
        throw SpectralError("empty spectrum");
    const double last = spec.freq_at(spec.bins() - 1);
    if (freq_hz < spec.f0_hz - 1e-9 || freq_hz > last + 1e-9)
        throw SpectralError("frequency outside spectrum coverage");
    double pos = (freq_hz - spec.f0_hz) / spec.df_hz;
    double lo = std::floor(pos);
    std::size_t i = static_cast<std::size_t>(std::clamp(lo, 0.0, static_cast<double>(spec.bins() - 1)));
    if (i + 1 >= spec.bins())
        return spec.power_dbm[spec.bins() - 1];
    double frac = pos - static_cast<double>(i);
    return spec.power_dbm[i] * (1.0 - frac) + spec.power_dbm[i + 1] * frac;
}

CompareResult compare_spectra(const Spectrum& a, const Spectrum& b, double band_lo_hz,
                              double band_hi_hz) {
    if (!(band_lo_hz < band_hi_hz))
        throw SpectralError("empty comparison band");
    const double a_hi = a.freq_at(a.bins() - 1);
    const double b_hi = b.freq_at(b.bins() - 1);
    const double lo = std::max({band_lo_hz, a.f0_hz, b.f0_hz});
    const double hi = std::min({band_hi_hz, a_hi, b_hi});
    if (!(lo < hi))
        throw DisjointBands("disjoint frequency coverage");

    // Evaluate on the finer grid so the distance is symmetric in its inputs.
    const Spectrum& grid = a.df_hz <= b.df_hz ? a : b;
    std::size_t first = static_cast<std::size_t>(
        std::ceil((lo - grid.f0_hz) / grid.df_hz - 1e-9));
    std::size_t last = static_cast<std::size_t>(
        std::floor((hi - grid.f0_hz) / grid.df_hz + 1e-9));
    last = std::min(last, grid.bins() - 1);

    double sum_sq = 0;
    std::size_t count = 0;
    for (std::size_t i = first; i <= last; ++i) {
        double f = grid.freq_at(i);
        double d = value_at(a, f) - value_at(b, f);
        sum_sq += d * d;
        ++count;
    }
    if (count == 0)
        throw DisjointBands("no comparison bins inside the band");

    CompareResult out;
    out.log_spectral_distance_db = std::sqrt(sum_sq / static_cast<double>(count));

    const double peak_floor = -150;
    auto a_peaks = find_peaks(a, peak_floor);
    auto b_peaks = find_peaks(b, peak_floor);
    std::size_t in_band = 0, matched = 0;
    const double half_bin = std::max(a.df_hz, b.df_hz) / 2;
    for (const Peak& pa : a_peaks) {
        if (pa.freq_hz < lo || pa.freq_hz > hi)
            continue;
        ++in_band;
        const Peak* hit = nullptr;
        for (const Peak& pb : b_peaks) {
            if (std::abs(pb.freq_hz - pa.freq_hz) <= half_bin) {
                hit = &pb;
                break;
            }
        }
        if (hit) {
            ++matched;
            out.per_peak_delta_db.emplace_back(pa.freq_hz, hit->power_dbm - pa.power_dbm);
        }
    }
    out.peak_match_fraction =
        in_band == 0 ? 1.0
                     : static_cast<double>(matched) / static_cast<double>(in_band);
    return out;
}

std::string to_csv(const Spectrum& spec) {
    std::ostringstream os;
    os << "#window=" << window_name(spec.window) << '\n';
    os << "#n_fft=" << spec.n_fft << '\n';
    os << "#ref_impedance_ohms=" << format_double(spec.ref_impedance_ohms) << '\n';
    os << "#source=" << source_name(spec.source) << '\n';
    os << "#has_dc_bin=" << (spec.has_dc_bin ? 1 : 0) << '\n';
    os << "freq_hz,power_dbm\n";
    for (std::size_t i = 0; i < spec.bins(); ++i)
        os << format_double(spec.freq_at(i)) << ',' << format_double(spec.power_dbm[i])
           << '\n';
    return os.str();
}

Spectrum from_csv(const std::string& text) {
    Spectrum out;
    std::istringstream stream(text);
    std::string line;
    std::map<std::string, std::string> meta;
    std::vector<double> freqs;
    bool header_seen = false;
    int line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        if (line.empty())
            continue;
        if (line[0] == '#') {
            auto eq = line.find('=');
            if (eq != std::string::npos)
                meta[line.substr(1, eq - 1)] = line.substr(eq + 1);
            continue;
        }
        if (!header_seen) {
            if (line != "freq_hz,power_dbm")
                throw SpectralError("line " + std::to_string(line_no) +
                                    ": expected header freq_hz,power_dbm");
            header_seen = true;
            continue;
        }
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw SpectralError("line " + std::to_string(line_no) + ": malformed row");
        auto f = parse_si_number(line.substr(0, comma));
        auto p = parse_si_number(line.substr(comma + 1));
        if (!f || !p)
            throw SpectralError("line " + std::to_string(line_no) + ": bad number");
        freqs.push_back(*f);
        out.power_dbm.push_back(*p);
    }
    if (out.power_dbm.size() < 2)
        throw SpectralError("spectrum needs at least two bins");
    out.f0_hz = freqs.front();
    out.df_hz = (freqs.back() - freqs.front()) / static_cast<double>(freqs.size() - 1);
    if (!(out.df_hz > 0))
        throw SpectralError("frequency column must increase");
    for (std::size_t i = 0; i < freqs.size(); ++i)
        if (std::abs(freqs[i] - out.freq_at(i)) > 1e-6 * std::max(1.0, std::abs(freqs[i])))
            throw SpectralError("frequency column is not uniformly spaced");

    if (auto it = meta.find("window"); it != meta.end())
        out.window = it->second == "hann" ? Window::hann : Window::rectangular;
    if (auto it = meta.find("n_fft"); it != meta.end())
        out.n_fft = std::stoi(it->second);
    if (auto it = meta.find("ref_impedance_ohms"); it != meta.end())
        out.ref_impedance_ohms = *parse_si_number(it->second);
    if (auto it = meta.find("source"); it != meta.end())
        out.source = it->second == "measured" ? Source::measured : Source::simulated;
    if (auto it = meta.find("has_dc_bin"); it != meta.end())
        out.has_dc_bin = it->second == "1";
    else
        out.has_dc_bin = out.f0_hz == 0;
    return out;
}

} // namespace emi::spectral

#include "emi/svg.hpp"

#include "emi/numbers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace emi::svg {

namespace {

constexpr double kWidth = 860, kHeight = 480;
constexpr double kLeft = 70, kRight = 20, kTop = 44, kBottom = 52;

std::string freq_label(double f) {
    if (f >= 1e6)
        return emi::format_double(f / 1e6) + " MHz";
    if (f >= 1e3)
        return emi::format_double(f / 1e3) + " kHz";
    return emi::format_double(f) + " Hz";
}

std::string num(double v) {
    return emi::format_fixed(v, 2);
}

} // namespace

std::string spectrum_svg(const spectral::Spectrum& spec, const std::string& title,
                         double band_lo_hz, double band_hi_hz) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < spec.bins(); ++i) {
        double f = spec.freq_at(i);
        if (f > 0 && f >= band_lo_hz && f <= band_hi_hz)
            pts.emplace_back(f, spec.power_dbm[i]);
    }

    double y_lo = -120, y_hi = 0;
    if (!pts.empty()) {
        double p_min = pts[0].second, p_max = pts[0].second;
        for (const auto& [f, p] : pts) {
            p_min = std::min(p_min, p);
            p_max = std::max(p_max, p);
        }
        y_lo = 20 * std::floor(p_min / 20) - 0;
        y_hi = 20 * std::ceil(p_max / 20);
        if (y_hi == y_lo)
            y_hi += 20;
    }
    const double x_lo = std::log10(band_lo_hz), x_hi = std::log10(band_hi_hz);
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto x_of = [&](double f) {
        return kLeft + (std::log10(f) - x_lo) / (x_hi - x_lo) * plot_w;
    };
    auto y_of = [&](double dbm) {
        return kTop + (y_hi - dbm) / (y_hi - y_lo) * plot_h;
    };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
       << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight
       << "\">\n";
    os << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\" font-size=\"16\">"
       << title << "</text>\n";

    // Decade gridlines.
    for (double decade = std::ceil(x_lo); decade <= x_hi + 1e-9; ++decade) {
        double f = std::pow(10.0, decade);
        double x = x_of(f);
        os << "<line x1=\"" << num(x) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(x)
           << "\" y2=\"" << num(kTop + plot_h)
           << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
        os << "<text x=\"" << num(x) << "\" y=\"" << num(kTop + plot_h + 18)
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
           << freq_label(f) << "</text>\n";
    }
    // Horizontal gridlines every 20 dB.
    for (double level = y_lo; level <= y_hi + 1e-9; level += 20) {
        double y = y_of(level);
        os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(y) << "\" x2=\""
           << num(kLeft + plot_w) << "\" y2=\"" << num(y)
           << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
        os << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
           << emi::format_double(level) << "</text>\n";
    }
    os << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\""
       << num(plot_w) << "\" height=\"" << num(plot_h)
       << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
          "frequency</text>\n";
    os << "<text x=\"18\" y=\"" << kHeight / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
          "transform=\"rotate(-90 18 "
       << kHeight / 2 << ")\">power (dBm)</text>\n";

    if (!pts.empty()) {
        os << "<polyline fill=\"none\" stroke=\"#1761a0\" stroke-width=\"1.2\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i)
                os << ' ';
            os << num(x_of(pts[i].first)) << ',' << num(y_of(pts[i].second));
        }
        os << "\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace emi::svg

#pragma once

#include "emi/spectral.hpp"

#include <string>

namespace emi::svg {

// Static plot of a spectrum: logarithmic frequency axis, dBm vertical axis,
// decade gridlines. Bins outside [band_lo_hz, band_hi_hz] or at f <= 0 are
// dropped. Output is deterministic for identical input.
std::string spectrum_svg(const spectral::Spectrum& spec, const std::string& title,
                         double band_lo_hz, double band_hi_hz);

} // namespace emi::svg

#pragma once

#include "emi/spectral.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emi::hfed {

struct HfedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Instrument { signal_analyzer, usrp };
enum class Setup { lab_setup1, lab_setup2, lab_setup3, lab_setup4, home_setup1 };
enum class Category { smps, non_smps, unknown };
enum class Location { lab, home };

// Measured traces span 10 kHz to 5 MHz.
inline constexpr double kMinFreqHz = 10e3;
inline constexpr double kMaxFreqHz = 5e6;

// Point count per capture, fixed by the acquisition instrument.
constexpr int points_for(Instrument instrument) {
    return instrument == Instrument::signal_analyzer ? 32768 : 100000;
}

std::string_view instrument_name(Instrument);
std::string_view setup_name(Setup);
std::string_view category_name(Category);
std::string_view location_name(Location);
std::optional<Instrument> parse_instrument(std::string_view);
std::optional<Setup> parse_setup(std::string_view);

struct MeasuredTrace {
    spectral::Spectrum spectrum; // source == measured
    Instrument instrument = Instrument::signal_analyzer;
    Setup setup = Setup::lab_setup1;
    std::optional<std::string> appliance_label;
    std::string timestamp; // ISO 8601

    bool operator==(const MeasuredTrace&) const = default;
};

// Throws HfedError when the trace violates instrument or coverage rules.
void validate(const MeasuredTrace& trace);

struct ApplianceCatalogEntry {
    std::string name;
    std::string brand;
    Category category = Category::unknown;
    std::vector<double> power_watts; // multiple entries for multi-mode appliances
    std::vector<Location> locations;

    bool operator==(const ApplianceCatalogEntry&) const = default;
};

MeasuredTrace read_trace(std::istream& in);
MeasuredTrace read_trace(const std::string& text);
MeasuredTrace read_trace_file(const std::string& path);
std::string write_trace(const MeasuredTrace& trace);
void write_trace_file(const MeasuredTrace& trace, const std::string& path);

// Interpolates onto a uniform grid, linear in dB. The target grid must lie
// inside the source coverage.
spectral::Spectrum resample(const spectral::Spectrum& spec, double f0_hz, double df_hz,
                            int n);

const std::vector<ApplianceCatalogEntry>& catalog();
const ApplianceCatalogEntry* catalog_lookup(std::string_view name);
std::string catalog_json();

// Maps an externally formatted trace file (plain frequency/amplitude columns,
// units auto-detected) onto the canonical trace layout, resampling onto the
// instrument grid when the point count differs.
MeasuredTrace import_trace_file(const std::string& path, Instrument instrument,
                                Setup setup,
                                std::optional<std::string> appliance_label = {},
                                std::string timestamp = "1970-01-01T00:00:00Z");

} // namespace emi::hfed

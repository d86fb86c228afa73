#include "emi/hfed.hpp"

#include "emi/numbers.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace emi::hfed {

namespace {

using emi::format_double;
using emi::parse_si_number;

const char* kTraceKeys[] = {"instrument", "setup", "appliance", "timestamp",
                            "f0_hz",      "df_hz"};

bool is_trace_key(const std::string& key) {
    return std::find(std::begin(kTraceKeys), std::end(kTraceKeys), key) !=
           std::end(kTraceKeys);
}

} // namespace

std::string_view instrument_name(Instrument instrument) {
    return instrument == Instrument::signal_analyzer ? "signal_analyzer" : "usrp";
}

std::string_view setup_name(Setup setup) {
    switch (setup) {
    case Setup::lab_setup1: return "lab_setup1";
    case Setup::lab_setup2: return "lab_setup2";
    case Setup::lab_setup3: return "lab_setup3";
    case Setup::lab_setup4: return "lab_setup4";
    case Setup::home_setup1: return "home_setup1";
    }
    return "lab_setup1";
}

std::string_view category_name(Category category) {
    switch (category) {
    case Category::smps: return "SMPS";
    case Category::non_smps: return "NON_SMPS";
    case Category::unknown: return "unknown";
    }
    return "unknown";
}

std::string_view location_name(Location location) {
    return location == Location::lab ? "lab" : "home";
}

std::optional<Instrument> parse_instrument(std::string_view s) {
    if (s == "signal_analyzer")
        return Instrument::signal_analyzer;
    if (s == "usrp")
        return Instrument::usrp;
    return std::nullopt;
}

std::optional<Setup> parse_setup(std::string_view s) {
    for (Setup setup : {Setup::lab_setup1, Setup::lab_setup2, Setup::lab_setup3,
                        Setup::lab_setup4, Setup::home_setup1})
        if (s == setup_name(setup))
            return setup;
    return std::nullopt;
}

void validate(const MeasuredTrace& trace) {
    const auto& s = trace.spectrum;
    if (s.source != spectral::Source::measured)
        throw HfedError("trace spectrum must be marked as measured");
    const int expected = points_for(trace.instrument);
    if (static_cast<int>(s.bins()) != expected)
        throw HfedError("point-count mismatch: " +
                        std::string(instrument_name(trace.instrument)) + " traces have " +
                        std::to_string(expected) + " points, got " +
                        std::to_string(s.bins()));
    if (!(s.df_hz > 0))
        throw HfedError("trace frequency step must be positive");
    const double f_lo = s.f0_hz;
    const double f_hi = s.freq_at(s.bins() - 1);
    const double slack = 1e-6 * kMaxFreqHz;
    if (f_lo < kMinFreqHz - slack || f_hi > kMaxFreqHz + slack)
        throw HfedError("trace frequencies outside the 10 kHz to 5 MHz coverage: " +
                        format_double(f_lo) + " to " + format_double(f_hi));
    for (double p : s.power_dbm)
        if (!std::isfinite(p))
            throw HfedError("trace contains a non-finite power value");
    if (trace.timestamp.empty() ||
        trace.timestamp.find('\n') != std::string::npos)
        throw HfedError("trace timestamp must be a single non-empty line");
    if (trace.appliance_label &&
        (trace.appliance_label->empty() ||
         trace.appliance_label->find('\n') != std::string::npos))
        throw HfedError("appliance label must be a single non-empty line");
}

std::string write_trace(const MeasuredTrace& trace) {
    validate(trace);
    std::ostringstream os;
    os << "#instrument=" << instrument_name(trace.instrument) << '\n';
    os << "#setup=" << setup_name(trace.setup) << '\n';
    if (trace.appliance_label)
        os << "#appliance=" << *trace.appliance_label << '\n';
    os << "#timestamp=" << trace.timestamp << '\n';
    os << "#f0_hz=" << format_double(trace.spectrum.f0_hz) << '\n';
    os << "#df_hz=" << format_double(trace.spectrum.df_hz) << '\n';
    os << spectral::to_csv(trace.spectrum);
    return os.str();
}

void write_trace_file(const MeasuredTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw HfedError("cannot open " + path + " for writing");
    out << write_trace(trace);
    if (!out)
        throw HfedError("write to " + path + " failed");
}

MeasuredTrace read_trace(const std::string& text) {
    std::map<std::string, std::string> meta;
    std::ostringstream spectral_text;
    std::istringstream stream(text);
    std::string line;
    while (std::getline(stream, line)) {
        if (!line.empty() && line[0] == '#') {
            auto eq = line.find('=');
            if (eq != std::string::npos) {
                std::string key = line.substr(1, eq - 1);
                if (is_trace_key(key)) {
                    meta[key] = line.substr(eq + 1);
                    continue;
                }
            }
        }
        spectral_text << line << '\n';
    }

    MeasuredTrace trace;
    try {
        trace.spectrum = spectral::from_csv(spectral_text.str());
    } catch (const spectral::SpectralError& e) {
        throw HfedError(std::string("malformed trace: ") + e.what());
    }

    auto require = [&](const char* key) -> const std::string& {
        auto it = meta.find(key);
        if (it == meta.end())
            throw HfedError(std::string("trace is missing #") + key + " metadata");
        return it->second;
    };
    auto instrument = parse_instrument(require("instrument"));
    if (!instrument)
        throw HfedError("unknown instrument: " + meta["instrument"]);
    trace.instrument = *instrument;
    auto setup = parse_setup(require("setup"));
    if (!setup)
        throw HfedError("unknown setup: " + meta["setup"]);
    trace.setup = *setup;
    trace.timestamp = require("timestamp");
    if (auto it = meta.find("appliance"); it != meta.end())
        trace.appliance_label = it->second;

    // The exact grid is carried in metadata so rewritten rows reproduce the
    // original bytes; the row-derived grid only cross-checks it.
    for (const char* key : {"f0_hz", "df_hz"}) {
        auto it = meta.find(key);
        if (it == meta.end())
            continue;
        auto value = parse_si_number(it->second);
        if (!value)
            throw HfedError(std::string("bad #") + key + " value: " + it->second);
        double& slot =
            std::string_view(key) == "f0_hz" ? trace.spectrum.f0_hz : trace.spectrum.df_hz;
        if (std::abs(*value - slot) > 1e-6 * std::max(1.0, std::abs(slot)))
            throw HfedError(std::string("#") + key +
                            " disagrees with the frequency column");
        slot = *value;
    }

    trace.spectrum.source = spectral::Source::measured;
    validate(trace);
    return trace;
}

MeasuredTrace read_trace(std::istream& in) {
    std::ostringstream os;
    os << in.rdbuf();
    return read_trace(os.str());
}

MeasuredTrace read_trace_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw HfedError("cannot open " + path);
    return read_trace(in);
}

spectral::Spectrum resample(const spectral::Spectrum& spec, double f0_hz, double df_hz,
                            int n) {
    if (n < 2 || !(df_hz > 0))
        throw HfedError("resample grid needs n >= 2 and positive df");
    const double src_lo = spec.f0_hz;
    const double src_hi = spec.freq_at(spec.bins() - 1);
    const double dst_hi = f0_hz + (n - 1) * df_hz;
    const double slack = 1e-9 * std::max(std::abs(src_hi), 1.0);
    if (f0_hz < src_lo - slack || dst_hi > src_hi + slack)
        throw HfedError("resample grid extends beyond source coverage: " +
                        format_double(f0_hz) + " to " + format_double(dst_hi) +
                        " vs " + format_double(src_lo) + " to " + format_double(src_hi));

    spectral::Spectrum out;
    out.f0_hz = f0_hz;
    out.df_hz = df_hz;
    out.window = spec.window;
    out.ref_impedance_ohms = spec.ref_impedance_ohms;
    out.source = spec.source;
    out.n_fft = n;
    out.has_dc_bin = f0_hz == 0;
    out.power_dbm.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double f = f0_hz + i * df_hz;
        double pos = (f - spec.f0_hz) / spec.df_hz;
        // Snap to coincident source bins so shared grid points copy exactly.
        double nearest = std::round(pos);
        if (std::abs(pos - nearest) < 1e-9 * std::max(1.0, std::abs(pos)))
            pos = nearest;
        auto k = static_cast<std::ptrdiff_t>(std::floor(pos));
        if (k < 0)
            k = 0;
        if (k >= static_cast<std::ptrdiff_t>(spec.bins()) - 1)
            k = static_cast<std::ptrdiff_t>(spec.bins()) - 2;
        double t = pos - static_cast<double>(k);
        if (t < 0)
            t = 0;
        if (t > 1)
            t = 1;
        out.power_dbm[static_cast<std::size_t>(i)] =
            (1.0 - t) * spec.power_dbm[static_cast<std::size_t>(k)] +
            t * spec.power_dbm[static_cast<std::size_t>(k) + 1];
    }
    return out;
}

const std::vector<ApplianceCatalogEntry>& catalog() {
    using enum Location;
    static const std::vector<ApplianceCatalogEntry> entries = {
        {"CFL1", "Crompton Greaves", Category::smps, {18}, {lab, home}},
        {"CFL2", "Bajaj", Category::smps, {15}, {lab, home}},
        {"CFL3", "Bajaj", Category::smps, {15}, {lab, home}},
        {"CFL4", "Bajaj", Category::smps, {5}, {lab, home}},
        {"LED Lamp-1", "Genre India", Category::smps, {5}, {lab, home}},
        {"LED Lamp-2", "Unbranded", Category::smps, {3}, {lab, home}},
        {"LED Lamp-3", "Crompton Greaves", Category::smps, {0.5}, {lab, home}},
        {"Laptop Charger-1", "Dell", Category::smps, {90}, {lab, home}},
        {"Laptop Charger-2", "HP", Category::smps, {65}, {lab, home}},
        {"Phone Charger-1", "Samsung", Category::smps, {5}, {lab, home}},
        {"Phone Charger-2", "Asus", Category::smps, {7}, {lab, home}},
        {"Phone Charger-3", "LG", Category::smps, {6}, {lab, home}},
        {"LCD Monitor", "HP P191", Category::smps, {20}, {lab, home}},
        {"Printer", "HP P1007", Category::smps, {5}, {lab, home}},
        {"Speakers", "Harman Kardon", Category::smps, {24}, {lab, home}},
        {"Modem", "Asus Router", Category::smps, {18}, {lab, home}},
        {"Induction Cooktop-1", "Philips", Category::smps, {500, 1300}, {lab, home}},
        {"Induction Cooktop-2", "Maharaja Whiteline", Category::smps, {600, 1000},
         {lab, home}},
        {"Microwave", "Kenstar", Category::unknown, {1250}, {home}},
        {"Refrigerator", "LG", Category::non_smps, {1020}, {home}},
        {"Blender", "Inalsa", Category::non_smps, {180}, {lab, home}},
        {"Iron", "Philips", Category::non_smps, {535}, {lab}},
        {"Room Heater", "North Star", Category::non_smps, {1500}, {lab}},
        {"Television", "LG", Category::smps, {60}, {home}},
    };
    return entries;
}

const ApplianceCatalogEntry* catalog_lookup(std::string_view name) {
    for (const auto& entry : catalog())
        if (entry.name == name)
            return &entry;
    return nullptr;
}

std::string catalog_json() {
    nlohmann::ordered_json root = nlohmann::ordered_json::array();
    for (const auto& entry : catalog()) {
        nlohmann::ordered_json e;
        e["name"] = entry.name;
        e["brand"] = entry.brand;
        e["category"] = category_name(entry.category);
        e["power_watts"] = entry.power_watts;
        auto locs = nlohmann::ordered_json::array();
        for (Location loc : entry.locations)
            locs.push_back(location_name(loc));
        e["locations"] = locs;
        root.push_back(e);
    }
    return root.dump(2) + "\n";
}

MeasuredTrace import_trace_file(const std::string& path, Instrument instrument,
                                Setup setup, std::optional<std::string> appliance_label,
                                std::string timestamp) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw HfedError("cannot open " + path);

    std::vector<double> freqs, powers;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#' || line[0] == '%')
            continue;
        for (char& c : line)
            if (c == ',' || c == ';' || c == '\t')
                c = ' ';
        std::istringstream row(line);
        std::string a, b;
        if (!(row >> a >> b)) {
            if (line_no == 1)
                continue; // header line
            throw HfedError(path + ": line " + std::to_string(line_no) +
                            ": expected two columns");
        }
        auto f = parse_si_number(a);
        auto p = parse_si_number(b);
        if (!f || !p) {
            if (line_no == 1)
                continue; // textual header
            throw HfedError(path + ": line " + std::to_string(line_no) +
                            ": bad number");
        }
        freqs.push_back(*f);
        powers.push_back(*p);
    }
    if (freqs.size() < 2)
        throw HfedError(path + ": needs at least two data rows");
    if (!std::is_sorted(freqs.begin(), freqs.end()))
        throw HfedError(path + ": frequency column must increase");

    // Column unit auto-detection: files that top out below 5 or 5000 carry
    // MHz or kHz respectively.
    double scale = 1.0;
    if (freqs.back() <= 5.0 + 1e-9)
        scale = 1e6;
    else if (freqs.back() <= 5000.0 + 1e-6)
        scale = 1e3;
    for (double& f : freqs)
        f *= scale;

    spectral::Spectrum raw;
    raw.f0_hz = freqs.front();
    raw.df_hz = (freqs.back() - freqs.front()) / static_cast<double>(freqs.size() - 1);
    raw.power_dbm = std::move(powers);
    raw.n_fft = static_cast<int>(freqs.size());
    raw.source = spectral::Source::measured;
    raw.has_dc_bin = false;
    for (std::size_t i = 0; i < freqs.size(); ++i)
        if (std::abs(freqs[i] - raw.freq_at(i)) > 1e-4 * std::max(1.0, freqs[i]))
            throw HfedError(path + ": frequency grid is not uniform");

    MeasuredTrace trace;
    trace.instrument = instrument;
    trace.setup = setup;
    trace.appliance_label = std::move(appliance_label);
    trace.timestamp = std::move(timestamp);

    const int n = points_for(instrument);
    if (raw.n_fft == n) {
        trace.spectrum = std::move(raw);
    } else {
        // Nonstandard capture length: place onto the canonical instrument
        // grid restricted to what the file covers.
        double lo = std::max(kMinFreqHz, raw.f0_hz);
        double hi = std::min(kMaxFreqHz, raw.freq_at(raw.bins() - 1));
        if (!(hi > lo))
            throw HfedError(path + ": no overlap with the 10 kHz to 5 MHz band");
        trace.spectrum = resample(raw, lo, (hi - lo) / (n - 1), n);
    }
    trace.spectrum.source = spectral::Source::measured;
    validate(trace);
    return trace;
}

} // namespace emi::hfed

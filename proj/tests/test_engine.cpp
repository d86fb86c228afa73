#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "emi/engine.hpp"
#include "emi/netlist.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace emi;
using namespace emi::engine;

namespace {

netlist::BuckParams ccm_reference() {
    netlist::BuckParams p;
    p.vsupply_volts = 10;
    p.duty_fraction = 0.5;
    p.fsw_hz = 100e3;
    p.inductance_henries = 100e-6;
    p.capacitance_farads = 100e-6;
    p.load_resistance_ohms = 5;
    return p;
}

netlist::BuckParams router_params() {
    netlist::BuckParams p;
    p.vsupply_volts = 0.05;
    p.duty_fraction = 0.5;
    p.fsw_hz = 100e3;
    p.inductance_henries = 2.5e-6;
    p.capacitance_farads = 5e-6;
    p.load_resistance_ohms = 1000;
    return p;
}

netlist::Netlist switched_rc() {
    // Source, series switch, charge resistor into a capacitor with a bleed
    // resistor; periodic steady state has a closed-form solution.
    return netlist::parse_netlist(
        "dc v1 vin 0 v=5\n"
        "pwm s1 vin vx f=10k duty=0.25\n"
        "resistor rc vx vcap r=100\n"
        "capacitor c1 vcap 0 c=1u\n"
        "resistor rb vcap 0 r=10k\n"
        ".ground 0\n"
        ".probe v_c voltage vcap\n");
}

} // namespace

TEST_CASE("common_period basics") {
    netlist::BuckParams p = router_params();
    CHECK(common_period(netlist::buck_template(p)) == doctest::Approx(10e-6).epsilon(1e-12));

    // Two switches at 100 kHz and 40 kHz share a 50 us period (20 kHz beat).
    netlist::Netlist two = netlist::parse_netlist(
        "dc v1 vin 0 v=1\n"
        "pwm s1 vin a f=100k duty=0.5\n"
        "resistor r1 a 0 r=10\n"
        "pwm s2 vin b f=40k duty=0.5\n"
        "resistor r2 b 0 r=10\n"
        ".ground 0\n"
        ".probe i current v1\n");
    CHECK(common_period(two) == doctest::Approx(50e-6).epsilon(1e-9));

    // Frequencies within 1e-9 relative tolerance collapse to one period.
    netlist::Netlist near = netlist::parse_netlist(
        "dc v1 vin 0 v=1\n"
        "pwm s1 vin a f=100000 duty=0.5\n"
        "resistor r1 a 0 r=10\n"
        "pwm s2 vin b f=100000.0001 duty=0.5\n"
        "resistor r2 b 0 r=10\n"
        ".ground 0\n"
        ".probe i current v1\n");
    CHECK(common_period(near) == doctest::Approx(10e-6).epsilon(1e-6));
}

TEST_CASE("common_period matches an integer-arithmetic oracle") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<long long> small(1, 9);
    for (int trial = 0; trial < 100; ++trial) {
        long long p = small(rng), q = small(rng);
        double f1 = 100e3;
        double f2 = f1 * static_cast<double>(p) / static_cast<double>(q);
        // Oracle: T2 = (q/p) T1 in lowest terms q'/p'; lcm = q' * T1.
        long long g = std::gcd(p, q);
        double expect = static_cast<double>(q / g) / f1;
        netlist::Netlist n = netlist::parse_netlist(
            "dc v1 vin 0 v=1\n"
            "pwm s1 vin a f=" + std::to_string(f1) + " duty=0.5\n"
            "resistor r1 a 0 r=10\n"
            "pwm s2 vin b f=" + std::to_string(f2) + " duty=0.5\n"
            "resistor r2 b 0 r=10\n"
            ".ground 0\n"
            ".probe i current v1\n");
        CHECK(common_period(n) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("incommensurate frequencies are rejected") {
    double f2 = 100e3 * std::sqrt(2.0);
    netlist::Netlist n = netlist::parse_netlist(
        "dc v1 vin 0 v=1\n"
        "pwm s1 vin a f=100k duty=0.5\n"
        "resistor r1 a 0 r=10\n"
        "pwm s2 vin b f=" + std::to_string(f2) + " duty=0.5\n"
        "resistor r2 b 0 r=10\n"
        ".ground 0\n"
        ".probe i current v1\n");
    CHECK_THROWS_AS(common_period(n), IncommensurateFrequencies);
    CHECK_THROWS_AS(run_transient(n, SimConfig{}), IncommensurateFrequencies);
}

TEST_CASE("detect_steady_state on synthetic cycle vectors") {
    Eigen::VectorXd base = Eigen::VectorXd::LinSpaced(16, 0.0, 1.0);
    std::vector<Eigen::VectorXd> cycles;
    for (int k = 0; k < 6; ++k)
        cycles.push_back(base * (1.0 + std::pow(10.0, -2.0 * k)));
    // Relative cycle-to-cycle difference shrinks by 1e-2 per cycle; the first
    // pair under 1e-5 is (3, 4).
    auto idx = detect_steady_state(cycles, 1e-5);
    REQUIRE(idx.has_value());
    CHECK(*idx == 4);

    // Identical cycles settle immediately; zero tolerance never settles.
    std::vector<Eigen::VectorXd> flat{base, base, base};
    CHECK(detect_steady_state(flat, 1e-9) == std::size_t{1});
    CHECK(!detect_steady_state(flat, 0.0).has_value());
}

TEST_CASE("constant-zero circuit settles at the first comparable cycle") {
    netlist::Netlist n = netlist::parse_netlist(
        "dc v1 vin 0 v=0\n"
        "resistor r1 vin mid r=10\n"
        "capacitor c1 mid 0 c=1u\n"
        ".ground 0\n"
        ".probe v_mid voltage mid\n");
    SimConfig cfg;
    cfg.total_cycles = 50;
    cfg.capture_cycles = 2;
    TransientResult r = run_transient(n, cfg);
    CHECK(r.diagnostics.settled);
    CHECK(r.diagnostics.settle_cycle == 1);
    for (double v : r.waveforms.signals[0])
        CHECK(v == 0.0);
}

TEST_CASE("zero settle tolerance leaves the warning flag set") {
    SimConfig cfg;
    cfg.settle_tolerance = 0.0;
    cfg.total_cycles = 8;
    cfg.capture_cycles = 2;
    TransientResult r = run_transient(switched_rc(), cfg);
    CHECK(!r.diagnostics.settled);
    CHECK(r.diagnostics.steady_state_warning);
    CHECK(r.waveforms.samples() == 2u * 512u);
}

TEST_CASE("capture budget equal to the total records every cycle") {
    SimConfig cfg;
    cfg.total_cycles = 3;
    cfg.capture_cycles = 3;
    TransientResult r = run_transient(switched_rc(), cfg);
    CHECK(r.diagnostics.steady_state_warning);
    CHECK(r.waveforms.samples() == 3u * 512u);
    CHECK(r.waveforms.t0_seconds == 0.0);

    cfg.total_cycles = 1;
    cfg.capture_cycles = 1;
    TransientResult one = run_transient(switched_rc(), cfg);
    CHECK(one.waveforms.samples() == 512u);
}

TEST_CASE("switched RC matches the closed-form periodic steady state") {
    SimConfig cfg;
    TransientResult r = run_transient(switched_rc(), cfg);
    REQUIRE(r.diagnostics.settled);
    CHECK(r.diagnostics.duty_quantization_error == 0.0); // 0.25 * 512 is integral

    // Closed form: on-phase Thevenin drive, off-phase bleed decay.
    const double V = 5, rc = 100, rb = 10e3, C = 1e-6;
    const double vth = V * rb / (rb + rc);
    const double tau_on = (rc * rb / (rc + rb)) * C;
    const double tau_off = rb * C;
    const double t_on = 0.25e-4, t_off = 0.75e-4;
    const double alpha = std::exp(-t_on / tau_on), beta = std::exp(-t_off / tau_off);
    const double peak = vth * (1 - alpha) / (1 - alpha * beta);
    const double trough = peak * beta;

    const auto& vcap = *r.waveforms.signal("v_c");
    double mx = *std::max_element(vcap.begin(), vcap.end());
    double mn = *std::min_element(vcap.begin(), vcap.end());
    CHECK(mx == doctest::Approx(peak).epsilon(3e-3));
    CHECK(mn == doctest::Approx(trough).epsilon(3e-3));
}

TEST_CASE("CCM reference: load voltage and inductor ripple follow the design equations") {
    netlist::BuckParams p = ccm_reference();
    netlist::Netlist n = netlist::with_probe(
        netlist::buck_template(p),
        {"i_l", netlist::ProbeKind::branch_current, "l1"});
    TransientResult r = run_transient(n, SimConfig{});
    REQUIRE(r.diagnostics.settled);
    INFO("settle cycle ", r.diagnostics.settle_cycle);

    const auto& vload = *r.waveforms.signal("v_vload");
    double mean = std::accumulate(vload.begin(), vload.end(), 0.0) /
                  static_cast<double>(vload.size());
    CHECK(mean == doctest::Approx(5.0).epsilon(0.01)); // duty * vsupply

    const auto& il = *r.waveforms.signal("i_l");
    double ripple = *std::max_element(il.begin(), il.end()) -
                    *std::min_element(il.begin(), il.end());
    // dI = Vload (1 - duty) / (L Fsw)
    CHECK(ripple == doctest::Approx(0.25).epsilon(0.02));
}

TEST_CASE("CCM settle cycle stays at its recorded value") {
    netlist::Netlist n = netlist::buck_template(ccm_reference());
    TransientResult r = run_transient(n, SimConfig{});
    REQUIRE(r.diagnostics.settled);
    // Regression pin; the underdamped LC transient decays with a ~1 ms time
    // constant, so the 1e-6 relative tolerance lands around a thousand cycles.
    CHECK(r.diagnostics.settle_cycle > 200);
    CHECK(r.diagnostics.settle_cycle < 4000);
}

TEST_CASE("series resistance on the inductor shifts the DC operating point") {
    netlist::BuckParams p = ccm_reference();
    p.esr_l_ohms = 0.5;
    netlist::Netlist n = netlist::buck_template(p);
    TransientResult r = run_transient(n, SimConfig{});
    const auto& vload = *r.waveforms.signal("v_vload");
    double mean = std::accumulate(vload.begin(), vload.end(), 0.0) /
                  static_cast<double>(vload.size());
    // Voltage divider against the load: duty*V*R/(R+esr).
    CHECK(mean == doctest::Approx(5.0 * 5.0 / 5.5).epsilon(0.01));
}

TEST_CASE("router runs discontinuous: inductor current rests at zero") {
    netlist::Netlist n = netlist::with_probe(
        netlist::buck_template(router_params()),
        {"i_l", netlist::ProbeKind::branch_current, "l1"});
    TransientResult r = run_transient(n, SimConfig{});
    REQUIRE(r.diagnostics.settled);

    const auto& il = *r.waveforms.signal("i_l");
    double mn = *std::min_element(il.begin(), il.end());
    CHECK(mn >= -1e-9);
    std::size_t resting = 0;
    for (double i : il)
        if (std::abs(i) < 1e-9)
            ++resting;
    // Deep DCM: the inductor idles for a large part of every period.
    CHECK(static_cast<double>(resting) / static_cast<double>(il.size()) > 0.2);

    CHECK(r.diagnostics.max_diode_current_residual_amps < 1e-9);
    CHECK(r.diagnostics.max_diode_voltage_residual_volts < 1e-9);

    const auto& vload = *r.waveforms.signal("v_vload");
    double mean = std::accumulate(vload.begin(), vload.end(), 0.0) /
                  static_cast<double>(vload.size());
    // DCM conversion ratio M = 2 / (1 + sqrt(1 + 4K/D^2)), K = 2L/(R T).
    const double K = 2 * 2.5e-6 / (1000.0 * 10e-6);
    const double M = 2.0 / (1.0 + std::sqrt(1.0 + 4.0 * K / 0.25));
    CHECK(mean == doctest::Approx(0.05 * M).epsilon(0.01));
}

TEST_CASE("supply current is gated by the switch") {
    netlist::Netlist n = netlist::buck_template(router_params());
    SimConfig cfg;
    TransientResult r = run_transient(n, cfg);
    const auto& isup = *r.waveforms.signal("i_supply");
    const std::size_t spp = 512;
    for (std::size_t k = 0; k < isup.size(); ++k) {
        bool closed = std::fmod((static_cast<double>(k % spp) + 0.5) / spp, 1.0) < 0.5;
        if (!closed)
            CHECK(std::abs(isup[k]) < 1e-12); // series switch open: no draw
    }
}

TEST_CASE("diode stays off while the switch conducts") {
    netlist::Netlist n = netlist::with_probe(
        netlist::buck_template(ccm_reference()),
        {"i_d", netlist::ProbeKind::branch_current, "d1"});
    TransientResult r = run_transient(n, SimConfig{});
    const auto& id = *r.waveforms.signal("i_d");
    const std::size_t spp = 512;
    for (std::size_t k = 0; k < id.size(); ++k) {
        bool closed = (static_cast<double>(k % spp) + 0.5) / spp < 0.5;
        if (closed)
            CHECK(std::abs(id[k]) < 1e-9);
    }
    // And it carries the full inductor current while the switch is open (CCM).
    double off_max = 0;
    for (std::size_t k = 0; k < id.size(); ++k)
        if ((static_cast<double>(k % spp) + 0.5) / spp >= 0.5)
            off_max = std::max(off_max, id[k]);
    CHECK(off_max > 0.9); // around 1 A mean load current
}

TEST_CASE("sources deliver what the resistors burn") {
    auto check_balance = [](const netlist::Netlist& n) {
        TransientResult r = run_transient(n, SimConfig{});
        REQUIRE(r.diagnostics.settled);
        double delivered = r.diagnostics.mean_source_power_watts;
        double burned = r.diagnostics.mean_resistor_power_watts;
        REQUIRE(delivered > 0);
        CHECK(burned == doctest::Approx(delivered).epsilon(0.005));
    };
    check_balance(netlist::buck_template(ccm_reference()));
    netlist::BuckParams lossy = router_params();
    lossy.esr_l_ohms = 0.05;
    lossy.esr_c_ohms = 0.02;
    check_balance(netlist::buck_template(lossy));
}

TEST_CASE("identical runs produce identical waveforms") {
    netlist::Netlist n = netlist::buck_template(router_params());
    SimConfig cfg;
    cfg.total_cycles = 4000;
    TransientResult a = run_transient(n, cfg);
    TransientResult b = run_transient(n, cfg);
    CHECK(a.waveforms == b.waveforms);
}

TEST_CASE("waveform CSV layout") {
    SimConfig cfg;
    cfg.total_cycles = 40;
    cfg.capture_cycles = 1;
    cfg.settle_tolerance = 1e-3;
    TransientResult r = run_transient(switched_rc(), cfg);
    std::string csv = to_csv(r.waveforms);
    CHECK(csv.rfind("t_s,v_c\n", 0) == 0);
    std::size_t rows = std::count(csv.begin(), csv.end(), '\n');
    CHECK(rows == r.waveforms.samples() + 1);
}

TEST_CASE("config validation") {
    SimConfig cfg;
    cfg.capture_cycles = 0;
    CHECK_THROWS_AS(validate(cfg), EngineError);
    cfg = SimConfig{};
    cfg.total_cycles = 2;
    cfg.capture_cycles = 8;
    CHECK_THROWS_AS(validate(cfg), EngineError);
    cfg = SimConfig{};
    cfg.dt_seconds = -1.0;
    CHECK_THROWS_AS(validate(cfg), EngineError);
    cfg = SimConfig{};
    cfg.steps_per_switch_period = 1;
    CHECK_THROWS_AS(validate(cfg), EngineError);
}

TEST_CASE("diagnostics describe the topology") {
    netlist::Netlist n = netlist::buck_template(ccm_reference());
    TransientResult r = run_transient(n, SimConfig{});
    CHECK(r.diagnostics.switch_count == 1);
    CHECK(r.diagnostics.diode_count == 1);
    CHECK(r.diagnostics.topology_state_count >= 2);
    CHECK(r.diagnostics.backward_euler_steps > 0);
    CHECK(r.diagnostics.total_steps > 0);
}

#pragma once

#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace emi::netlist {

// Two-terminal element kinds. Current through a component is taken positive
// from node_a to node_b; a diode conducts from node_a (anode) to node_b
// (cathode).
struct Resistor {
    double ohms = 0;

    friend bool operator==(const Resistor&, const Resistor&) = default;
};

struct Inductor {
    double henries = 0;
    double series_resistance_ohms = 0;

    friend bool operator==(const Inductor&, const Inductor&) = default;
};

struct Capacitor {
    double farads = 0;
    double series_resistance_ohms = 0;

    friend bool operator==(const Capacitor&, const Capacitor&) = default;
};

struct DcSource {
    double volts = 0; // v(node_a) - v(node_b)

    friend bool operator==(const DcSource&, const DcSource&) = default;
};

struct PwmSwitch {
    double frequency_hz = 0;
    double duty_fraction = 0;
    double phase_fraction = 0;

    friend bool operator==(const PwmSwitch&, const PwmSwitch&) = default;
};

struct IdealDiode {
    friend bool operator==(const IdealDiode&, const IdealDiode&) = default;
};

using ComponentKind =
    std::variant<Resistor, Inductor, Capacitor, DcSource, PwmSwitch, IdealDiode>;

struct Component {
    std::string id;
    ComponentKind kind;
    std::string node_a;
    std::string node_b;

    friend bool operator==(const Component&, const Component&) = default;
};

enum class ProbeKind { branch_current, node_voltage };

struct Probe {
    std::string name;
    ProbeKind kind;
    std::string target; // component id for currents, node name for voltages

    friend bool operator==(const Probe&, const Probe&) = default;
};

struct Netlist {
    std::vector<Component> components;
    std::string ground_node;
    std::vector<Probe> probes;

    friend bool operator==(const Netlist&, const Netlist&) = default;
};

struct ParseError : std::runtime_error {
    ParseError(int line, int column, const std::string& what);
    int line;
    int column;
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Throws ValidationError unless the netlist satisfies all structural
// invariants: unique component ids, positive element values, one ground node,
// no degenerate components, at least one source and one probe, resolvable
// probe targets, and every node reachable from ground.
void validate(const Netlist& netlist);

// Line-oriented text format:
//   <kind> <id> <nodeA> <nodeB> <param>=<value> ...
//   .ground <node>
//   .probe <name> current|voltage <target>
// '#' starts a comment. Values accept SI suffixes k, M, m, u, n, p.
Netlist parse_netlist(const std::string& text);

// Canonical text; parse_netlist(serialize_netlist(n)) is structurally equal
// to n. Values are written suffix-free in shortest round-trip form.
std::string serialize_netlist(const Netlist& netlist);

// Appliance model parameters for the simplified buck converter.
struct BuckParams {
    double vsupply_volts = 0;
    double duty_fraction = 0;
    double fsw_hz = 0;
    double inductance_henries = 0;
    double capacitance_farads = 0;
    double load_resistance_ohms = 0;
    double esr_l_ohms = 0;
    double esr_c_ohms = 0;
    double line_resistance_ohms = 0;

    friend bool operator==(const BuckParams&, const BuckParams&) = default;
};

void validate(const BuckParams& params);

// Buck converter netlist: source at supply_node, optional line resistor,
// switch s1 into node vdiode, freewheel diode d1 (anode at ground), inductor
// l1 to vload, capacitor c1 and resistor rload to ground. Probes: i_supply
// (source branch current), v_vdiode, v_vload.
Netlist buck_template(const BuckParams& params, const std::string& supply_node = "vin");

struct FilterParams {
    double cutoff_hz = 0;
    double characteristic_impedance_ohms = 50;

    friend bool operator==(const FilterParams&, const FilterParams&) = default;
};

void validate(const FilterParams& params);

// Two-port low-pass fragment solved from
//   1/(2*pi*sqrt(Lf*Cf)) = cutoff   and   sqrt(Lf/Cf) = Z0.
// The shunt capacitor sits on the line-side port so that it shunts EMI
// currents arriving from either direction; the series inductor faces the
// appliance port.
struct FilterFragment {
    double inductance_henries = 0;
    double capacitance_farads = 0;
    double cutoff_hz = 0;
    double characteristic_impedance_ohms = 0;

    std::vector<Component> components(const std::string& id_prefix,
                                      const std::string& line_node,
                                      const std::string& appliance_node,
                                      const std::string& ground_node) const;
};

FilterFragment emi_filter_template(const FilterParams& params);

// Splices a filter fragment between the appliance's supply node and the rest
// of its circuit. The appliance's own source stays on the line side.
Netlist insert_input_filter(const Netlist& appliance, const FilterParams& params);

// Joins appliances onto a shared DC bus: one source (voltage taken from the
// first appliance's source), series tap resistors, appliance fragments with
// their own sources removed and nodes prefixed appN. A zero resistance merges
// neighbouring taps. The i_supply probe sits on the shared source branch.
Netlist bus_compose(const std::vector<Netlist>& appliances,
                    const std::vector<double>& bus_resistances_ohms);

// Copy with one extra probe appended (validated).
Netlist with_probe(const Netlist& netlist, const Probe& probe);

const Component* find_component(const Netlist& netlist, const std::string& id);

} // namespace emi::netlist

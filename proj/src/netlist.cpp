#include "emi/netlist.hpp"

#include "emi/numbers.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace emi::netlist {

namespace {

std::string location_message(int line, int column, const std::string& what) {
    std::ostringstream os;
    os << "line " << line << ", column " << column << ": " << what;
    return os.str();
}

struct Token {
    std::string text;
    int column = 0; // 1-based
};

std::vector<Token> tokenize_line(const std::string& line) {
    std::vector<Token> tokens;
    size_t i = 0;
    while (i < line.size()) {
        if (std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
            continue;
        }
        if (line[i] == '#')
            break;
        size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])) &&
               line[i] != '#')
            ++i;
        tokens.push_back({line.substr(start, i - start), static_cast<int>(start) + 1});
    }
    return tokens;
}

class LineParser {
public:
    LineParser(int line_no, std::vector<Token> tokens)
        : line_(line_no), tokens_(std::move(tokens)) {}

    [[noreturn]] void fail(const Token& tok, const std::string& what) const {
        throw ParseError(line_, tok.column, what);
    }

    const Token& next(const std::string& expected) {
        if (index_ >= tokens_.size()) {
            int col = tokens_.empty() ? 1 : tokens_.back().column + static_cast<int>(tokens_.back().text.size());
            throw ParseError(line_, col, "expected " + expected);
        }
        return tokens_[index_++];
    }

    bool done() const { return index_ >= tokens_.size(); }

    // Remaining key=value pairs.
    std::map<std::string, double> params(const std::set<std::string>& allowed) {
        std::map<std::string, double> out;
        while (!done()) {
            const Token& tok = tokens_[index_++];
            auto eq = tok.text.find('=');
            if (eq == std::string::npos || eq == 0)
                fail(tok, "expected <param>=<value>, got '" + tok.text + "'");
            std::string key = tok.text.substr(0, eq);
            if (!allowed.count(key))
                fail(tok, "unknown parameter '" + key + "'");
            if (out.count(key))
                fail(tok, "duplicate parameter '" + key + "'");
            auto value = parse_si_number(tok.text.substr(eq + 1));
            if (!value)
                fail(tok, "bad numeric value in '" + tok.text + "'");
            out[key] = *value;
        }
        return out;
    }

private:
    int line_;
    std::vector<Token> tokens_;
    size_t index_ = 0;
};

double require(const std::map<std::string, double>& params, const std::string& key,
               const LineParser& lp, const Token& kind_tok) {
    auto it = params.find(key);
    if (it == params.end())
        lp.fail(kind_tok, "missing required parameter '" + key + "'");
    return it->second;
}

double optional(const std::map<std::string, double>& params, const std::string& key,
                double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

const char* kind_name(const ComponentKind& kind) {
    struct Visitor {
        const char* operator()(const Resistor&) const { return "resistor"; }
        const char* operator()(const Inductor&) const { return "inductor"; }
        const char* operator()(const Capacitor&) const { return "capacitor"; }
        const char* operator()(const DcSource&) const { return "dc"; }
        const char* operator()(const PwmSwitch&) const { return "pwm"; }
        const char* operator()(const IdealDiode&) const { return "diode"; }
    };
    return std::visit(Visitor{}, kind);
}

void check_kind_values(const Component& c) {
    const std::string& id = c.id;
    struct Visitor {
        const std::string& id;
        void operator()(const Resistor& r) const {
            if (!(r.ohms > 0))
                throw ValidationError("resistor '" + id + "' must have positive resistance");
        }
        void operator()(const Inductor& l) const {
            if (!(l.henries > 0))
                throw ValidationError("inductor '" + id + "' must have positive inductance");
            if (l.series_resistance_ohms < 0)
                throw ValidationError("inductor '" + id + "' has negative series resistance");
        }
        void operator()(const Capacitor& c) const {
            if (!(c.farads > 0))
                throw ValidationError("capacitor '" + id + "' must have positive capacitance");
            if (c.series_resistance_ohms < 0)
                throw ValidationError("capacitor '" + id + "' has negative series resistance");
        }
        void operator()(const DcSource&) const {}
        void operator()(const PwmSwitch& s) const {
            if (!(s.frequency_hz > 0))
                throw ValidationError("switch '" + id + "' must have positive frequency");
            if (!(s.duty_fraction > 0 && s.duty_fraction < 1))
                throw ValidationError("switch '" + id + "' duty must be in (0, 1)");
            if (!(s.phase_fraction >= 0 && s.phase_fraction < 1))
                throw ValidationError("switch '" + id + "' phase must be in [0, 1)");
        }
        void operator()(const IdealDiode&) const {}
    };
    std::visit(Visitor{id}, c.kind);
}

} // namespace

ParseError::ParseError(int line_no, int column_no, const std::string& what)
    : std::runtime_error(location_message(line_no, column_no, what)),
      line(line_no),
      column(column_no) {}

void validate(const Netlist& netlist) {
    if (netlist.ground_node.empty())
        throw ValidationError("missing ground node");
    if (netlist.probes.empty())
        throw ValidationError("missing probe: at least one probe is required");

    std::set<std::string> ids;
    std::set<std::string> nodes;
    bool has_source = false;
    for (const Component& c : netlist.components) {
        if (!ids.insert(c.id).second)
            throw ValidationError("duplicate id '" + c.id + "'");
        if (c.node_a == c.node_b)
            throw ValidationError("degenerate component '" + c.id +
                                  "': both terminals on node '" + c.node_a + "'");
        nodes.insert(c.node_a);
        nodes.insert(c.node_b);
        check_kind_values(c);
        if (std::holds_alternative<DcSource>(c.kind))
            has_source = true;
    }
    if (!has_source)
        throw ValidationError("netlist needs at least one DC source");
    if (!nodes.count(netlist.ground_node))
        throw ValidationError("ground node '" + netlist.ground_node +
                              "' is not attached to any component");

    // Connectivity from ground.
    std::map<std::string, std::vector<std::string>> adjacency;
    for (const Component& c : netlist.components) {
        adjacency[c.node_a].push_back(c.node_b);
        adjacency[c.node_b].push_back(c.node_a);
    }
    std::set<std::string> reached;
    std::vector<std::string> stack{netlist.ground_node};
    while (!stack.empty()) {
        std::string node = std::move(stack.back());
        stack.pop_back();
        if (!reached.insert(node).second)
            continue;
        for (const std::string& next : adjacency[node])
            if (!reached.count(next))
                stack.push_back(next);
    }
    for (const std::string& node : nodes)
        if (!reached.count(node))
            throw ValidationError("floating node '" + node +
                                  "': not reachable from ground");

    std::set<std::string> probe_names;
    for (const Probe& p : netlist.probes) {
        if (!probe_names.insert(p.name).second)
            throw ValidationError("duplicate probe name '" + p.name + "'");
        if (p.kind == ProbeKind::branch_current) {
            if (!ids.count(p.target))
                throw ValidationError("probe '" + p.name + "' targets unknown component '" +
                                      p.target + "'");
        } else {
            if (!nodes.count(p.target) && p.target != netlist.ground_node)
                throw ValidationError("probe '" + p.name + "' targets unknown node '" +
                                      p.target + "'");
        }
    }
}

Netlist parse_netlist(const std::string& text) {
    Netlist out;
    bool have_ground = false;

    std::istringstream stream(text);
    std::string line;
    int line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        auto tokens = tokenize_line(line);
        if (tokens.empty())
            continue;
        LineParser lp(line_no, tokens);
        const Token& head = lp.next("component kind or directive");

        if (head.text == ".ground") {
            const Token& node = lp.next("ground node name");
            if (have_ground)
                lp.fail(head, "duplicate .ground directive");
            have_ground = true;
            out.ground_node = node.text;
            if (!lp.done())
                lp.fail(head, "trailing tokens after .ground");
            continue;
        }
        if (head.text == ".probe") {
            const Token& name = lp.next("probe name");
            const Token& kind = lp.next("probe kind (current|voltage)");
            const Token& target = lp.next("probe target");
            ProbeKind pk;
            if (kind.text == "current")
                pk = ProbeKind::branch_current;
            else if (kind.text == "voltage")
                pk = ProbeKind::node_voltage;
            else
                lp.fail(kind, "probe kind must be 'current' or 'voltage'");
            if (!lp.done())
                lp.fail(head, "trailing tokens after .probe");
            out.probes.push_back({name.text, pk, target.text});
            continue;
        }
        if (head.text[0] == '.')
            lp.fail(head, "unknown directive '" + head.text + "'");

        const Token& id = lp.next("component id");
        const Token& node_a = lp.next("first node");
        const Token& node_b = lp.next("second node");

        ComponentKind kind;
        if (head.text == "resistor") {
            auto p = lp.params({"r"});
            kind = Resistor{require(p, "r", lp, head)};
        } else if (head.text == "inductor") {
            auto p = lp.params({"l", "esr"});
            kind = Inductor{require(p, "l", lp, head), optional(p, "esr", 0)};
        } else if (head.text == "capacitor") {
            auto p = lp.params({"c", "esr"});
            kind = Capacitor{require(p, "c", lp, head), optional(p, "esr", 0)};
        } else if (head.text == "dc") {
            auto p = lp.params({"v"});
            kind = DcSource{require(p, "v", lp, head)};
        } else if (head.text == "pwm") {
            auto p = lp.params({"f", "duty", "phase"});
            kind = PwmSwitch{require(p, "f", lp, head), require(p, "duty", lp, head),
                             optional(p, "phase", 0)};
        } else if (head.text == "diode") {
            if (!lp.done())
                lp.fail(head, "diode takes no parameters");
            kind = IdealDiode{};
        } else {
            lp.fail(head, "unknown component kind '" + head.text + "'");
        }
        out.components.push_back({id.text, std::move(kind), node_a.text, node_b.text});
    }

    if (!have_ground)
        throw ValidationError("missing ground: no .ground directive");
    try {
        validate(out);
    } catch (const ValidationError&) {
        throw;
    }
    return out;
}

std::string serialize_netlist(const Netlist& netlist) {
    std::ostringstream os;
    for (const Component& c : netlist.components) {
        os << kind_name(c.kind) << ' ' << c.id << ' ' << c.node_a << ' ' << c.node_b;
        struct Visitor {
            std::ostringstream& os;
            void operator()(const Resistor& r) const { os << " r=" << format_double(r.ohms); }
            void operator()(const Inductor& l) const {
                os << " l=" << format_double(l.henries);
                if (l.series_resistance_ohms != 0)
                    os << " esr=" << format_double(l.series_resistance_ohms);
            }
            void operator()(const Capacitor& c) const {
                os << " c=" << format_double(c.farads);
                if (c.series_resistance_ohms != 0)
                    os << " esr=" << format_double(c.series_resistance_ohms);
            }
            void operator()(const DcSource& s) const { os << " v=" << format_double(s.volts); }
            void operator()(const PwmSwitch& s) const {
                os << " f=" << format_double(s.frequency_hz)
                   << " duty=" << format_double(s.duty_fraction);
                if (s.phase_fraction != 0)
                    os << " phase=" << format_double(s.phase_fraction);
            }
            void operator()(const IdealDiode&) const {}
        };
        std::visit(Visitor{os}, c.kind);
        os << '\n';
    }
    os << ".ground " << netlist.ground_node << '\n';
    for (const Probe& p : netlist.probes) {
        os << ".probe " << p.name << ' '
           << (p.kind == ProbeKind::branch_current ? "current" : "voltage") << ' ' << p.target
           << '\n';
    }
    return os.str();
}

void validate(const BuckParams& p) {
    if (!(p.fsw_hz > 0))
        throw ValidationError("fsw must be positive");
    if (!(p.duty_fraction > 0 && p.duty_fraction < 1))
        throw ValidationError("duty must be in (0, 1)");
    if (!(p.vsupply_volts > 0))
        throw ValidationError("vsupply must be positive");
    if (!(p.inductance_henries > 0))
        throw ValidationError("inductance must be positive");
    if (!(p.capacitance_farads > 0))
        throw ValidationError("capacitance must be positive");
    if (!(p.load_resistance_ohms > 0))
        throw ValidationError("load resistance must be positive");
    if (p.esr_l_ohms < 0 || p.esr_c_ohms < 0 || p.line_resistance_ohms < 0)
        throw ValidationError("parasitic resistances must be non-negative");
}

Netlist buck_template(const BuckParams& params, const std::string& supply_node) {
    validate(params);
    Netlist n;
    n.ground_node = "0";
    n.components.push_back({"v1", DcSource{params.vsupply_volts}, supply_node, "0"});
    std::string switch_from = supply_node;
    if (params.line_resistance_ohms > 0) {
        n.components.push_back(
            {"rline", Resistor{params.line_resistance_ohms}, supply_node, "vsw"});
        switch_from = "vsw";
    }
    n.components.push_back(
        {"s1", PwmSwitch{params.fsw_hz, params.duty_fraction, 0}, switch_from, "vdiode"});
    n.components.push_back({"d1", IdealDiode{}, "0", "vdiode"});
    n.components.push_back(
        {"l1", Inductor{params.inductance_henries, params.esr_l_ohms}, "vdiode", "vload"});
    n.components.push_back(
        {"c1", Capacitor{params.capacitance_farads, params.esr_c_ohms}, "vload", "0"});
    n.components.push_back({"rload", Resistor{params.load_resistance_ohms}, "vload", "0"});
    n.probes.push_back({"i_supply", ProbeKind::branch_current, "v1"});
    n.probes.push_back({"v_vdiode", ProbeKind::node_voltage, "vdiode"});
    n.probes.push_back({"v_vload", ProbeKind::node_voltage, "vload"});
    validate(n);
    return n;
}

void validate(const FilterParams& p) {
    if (!(p.cutoff_hz > 0))
        throw ValidationError("filter cutoff must be positive");
    if (!(p.characteristic_impedance_ohms > 0))
        throw ValidationError("filter characteristic impedance must be positive");
}

FilterFragment emi_filter_template(const FilterParams& params) {
    validate(params);
    const double w = 2.0 * 3.14159265358979323846 * params.cutoff_hz;
    FilterFragment f;
    f.inductance_henries = params.characteristic_impedance_ohms / w;
    f.capacitance_farads = 1.0 / (w * params.characteristic_impedance_ohms);
    f.cutoff_hz = params.cutoff_hz;
    f.characteristic_impedance_ohms = params.characteristic_impedance_ohms;
    return f;
}

std::vector<Component> FilterFragment::components(const std::string& id_prefix,
                                                  const std::string& line_node,
                                                  const std::string& appliance_node,
                                                  const std::string& ground_node) const {
    return {
        {id_prefix + "cf", Capacitor{capacitance_farads, 0}, line_node, ground_node},
        {id_prefix + "lf", Inductor{inductance_henries, 0}, line_node, appliance_node},
    };
}

namespace {

// Non-ground terminal of the appliance's single DC source.
std::pair<const Component*, std::string> locate_supply(const Netlist& appliance) {
    const Component* source = nullptr;
    for (const Component& c : appliance.components) {
        if (!std::holds_alternative<DcSource>(c.kind))
            continue;
        if (source)
            throw ValidationError("appliance '" + c.id +
                                  "': expected exactly one DC source");
        source = &c;
    }
    if (!source)
        throw ValidationError("appliance has no DC source");
    if (source->node_a == appliance.ground_node)
        return {source, source->node_b};
    if (source->node_b == appliance.ground_node)
        return {source, source->node_a};
    throw ValidationError("appliance source '" + source->id +
                          "' must be ground-referenced");
}

} // namespace

Netlist insert_input_filter(const Netlist& appliance, const FilterParams& params) {
    auto [source, supply] = locate_supply(appliance);
    FilterFragment frag = emi_filter_template(params);
    const std::string filt_node = supply + ".filt";

    Netlist out;
    out.ground_node = appliance.ground_node;
    for (const Component& c : appliance.components) {
        Component copy = c;
        if (&c != source) {
            if (copy.node_a == supply)
                copy.node_a = filt_node;
            if (copy.node_b == supply)
                copy.node_b = filt_node;
        }
        out.components.push_back(std::move(copy));
    }
    for (Component& c : frag.components("filt.", supply, filt_node, out.ground_node))
        out.components.push_back(std::move(c));
    out.probes = appliance.probes;
    validate(out);
    return out;
}

Netlist bus_compose(const std::vector<Netlist>& appliances,
                    const std::vector<double>& bus_resistances_ohms) {
    if (appliances.empty())
        throw ValidationError("bus_compose requires at least one appliance");

    auto [first_source, first_supply] = locate_supply(appliances.front());
    const double volts = std::get<DcSource>(first_source->kind).volts;

    Netlist out;
    out.ground_node = "0";
    out.components.push_back({"vbus", DcSource{volts}, "bus", "0"});

    // Tap chain; zero resistances merge neighbouring tap nodes.
    std::vector<std::string> taps(appliances.size());
    std::string prev = "bus";
    for (size_t k = 0; k < appliances.size(); ++k) {
        double r = k < bus_resistances_ohms.size() ? bus_resistances_ohms[k] : 0.0;
        if (r < 0)
            throw ValidationError("bus resistance must be non-negative");
        if (r > 0) {
            std::string tap = "tap" + std::to_string(k);
            out.components.push_back({"rbus" + std::to_string(k), Resistor{r}, prev, tap});
            prev = tap;
        }
        taps[k] = prev;
    }

    out.probes.push_back({"i_supply", ProbeKind::branch_current, "vbus"});

    for (size_t k = 0; k < appliances.size(); ++k) {
        const Netlist& app = appliances[k];
        auto [source, supply] = locate_supply(app);
        const std::string prefix = "app" + std::to_string(k) + ".";
        auto rename_node = [&](const std::string& node) -> std::string {
            if (node == app.ground_node)
                return out.ground_node;
            if (node == supply)
                return taps[k];
            return prefix + node;
        };
        for (const Component& c : app.components) {
            if (&c == source)
                continue;
            out.components.push_back(
                {prefix + c.id, c.kind, rename_node(c.node_a), rename_node(c.node_b)});
        }
        for (const Probe& p : app.probes) {
            if (p.kind == ProbeKind::branch_current && p.target == source->id)
                continue; // sensing moved to the shared source
            std::string target = p.kind == ProbeKind::branch_current ? prefix + p.target
                                                                     : rename_node(p.target);
            out.probes.push_back({prefix + p.name, p.kind, std::move(target)});
        }
    }

    validate(out);
    return out;
}

Netlist with_probe(const Netlist& netlist, const Probe& probe) {
    Netlist out = netlist;
    out.probes.push_back(probe);
    validate(out);
    return out;
}

const Component* find_component(const Netlist& netlist, const std::string& id) {
    for (const Component& c : netlist.components)
        if (c.id == id)
            return &c;
    return nullptr;
}

} // namespace emi::netlist

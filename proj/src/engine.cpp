#include "emi/engine.hpp"

#include "emi/numbers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace emi::engine {

namespace {

constexpr double kFlipThreshold = 1e-12;
constexpr double kRmsFloor = 1e-12;

enum class Rule { trapezoidal, backward_euler };

struct Element {
    enum class Type { resistor, inductor, capacitor, source, pwm, diode };
    Type type;
    std::string id;
    int a = -1, b = -1; // node indices, -1 = ground
    double value = 0;   // ohms / henries / farads / volts
    double frequency = 0, duty = 0, phase = 0;
    int branch = -1; // source/pwm/diode
    int state = -1;  // inductor/capacitor
    int bit = -1;    // pwm/diode position in the topology bitmask
};

struct Build {
    std::vector<Element> elements;
    int n_nodes = 0;
    int n_branches = 0;
    int n_states = 0;
    int n_switches = 0;
    int n_diodes = 0;
    std::unordered_map<std::string, int> node_index; // ground absent
    std::unordered_map<std::string, int> element_of_id; // original id -> element
};

Build build_elements(const netlist::Netlist& n) {
    Build b;
    auto node_of = [&](const std::string& name) -> int {
        if (name == n.ground_node)
            return -1;
        auto [it, inserted] = b.node_index.try_emplace(name, b.n_nodes);
        if (inserted)
            ++b.n_nodes;
        return it->second;
    };
    auto push = [&](Element e) -> int {
        int idx = static_cast<int>(b.elements.size());
        b.elements.push_back(std::move(e));
        return idx;
    };
    for (const auto& c : n.components) {
        int a = node_of(c.node_a);
        int nb = node_of(c.node_b);
        struct Visitor {
            Build& b;
            const netlist::Component& c;
            int a, nb;
            std::function<int(const std::string&)> node_of;
            std::function<int(Element)> push;

            void operator()(const netlist::Resistor& r) const {
                b.element_of_id[c.id] =
                    push({Element::Type::resistor, c.id, a, nb, r.ohms});
            }
            void operator()(const netlist::Inductor& l) const {
                int from = a;
                if (l.series_resistance_ohms > 0) {
                    int mid = node_of(c.id + "#mid");
                    push({Element::Type::resistor, c.id + "#esr", a, mid,
                          l.series_resistance_ohms});
                    from = mid;
                }
                Element e{Element::Type::inductor, c.id + "#l", from, nb, l.henries};
                e.state = b.n_states++;
                b.element_of_id[c.id] = push(std::move(e));
            }
            void operator()(const netlist::Capacitor& cap) const {
                int from = a;
                if (cap.series_resistance_ohms > 0) {
                    int mid = node_of(c.id + "#mid");
                    push({Element::Type::resistor, c.id + "#esr", a, mid,
                          cap.series_resistance_ohms});
                    from = mid;
                }
                Element e{Element::Type::capacitor, c.id + "#c", from, nb, cap.farads};
                e.state = b.n_states++;
                b.element_of_id[c.id] = push(std::move(e));
            }
            void operator()(const netlist::DcSource& s) const {
                Element e{Element::Type::source, c.id, a, nb, s.volts};
                e.branch = b.n_branches++;
                b.element_of_id[c.id] = push(std::move(e));
            }
            void operator()(const netlist::PwmSwitch& s) const {
                Element e{Element::Type::pwm, c.id, a, nb, 0};
                e.frequency = s.frequency_hz;
                e.duty = s.duty_fraction;
                e.phase = s.phase_fraction;
                e.branch = b.n_branches++;
                e.bit = b.n_switches++;
                b.element_of_id[c.id] = push(std::move(e));
            }
            void operator()(const netlist::IdealDiode&) const {
                Element e{Element::Type::diode, c.id, a, nb, 0};
                e.branch = b.n_branches++;
                e.bit = b.n_diodes++;
                b.element_of_id[c.id] = push(std::move(e));
            }
        };
        std::visit(Visitor{b, c, a, nb, node_of, push}, c.kind);
    }
    // Diode bits sit above the switch bits.
    for (auto& e : b.elements)
        if (e.type == Element::Type::diode)
            e.bit += b.n_switches;
    if (b.n_switches + b.n_diodes > 48)
        throw EngineError("too many switching elements (max 48)");
    return b;
}

double companion_g(const Element& e, double dt, Rule rule) {
    if (e.type == Element::Type::inductor)
        return rule == Rule::trapezoidal ? dt / (2.0 * e.value) : dt / e.value;
    return rule == Rule::trapezoidal ? 2.0 * e.value / dt : e.value / dt;
}

Eigen::MatrixXd assemble(const Build& b, double dt, std::uint64_t bits, Rule rule) {
    const int n = b.n_nodes + b.n_branches;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    auto add = [&](int i, int j, double v) {
        if (i >= 0 && j >= 0)
            A(i, j) += v;
    };
    auto stamp_g = [&](int a, int bb, double g) {
        add(a, a, g);
        add(a, bb, -g);
        add(bb, a, -g);
        add(bb, bb, g);
    };
    for (const auto& e : b.elements) {
        switch (e.type) {
        case Element::Type::resistor:
            stamp_g(e.a, e.b, 1.0 / e.value);
            break;
        case Element::Type::inductor:
        case Element::Type::capacitor:
            stamp_g(e.a, e.b, companion_g(e, dt, rule));
            break;
        case Element::Type::source: {
            int row = b.n_nodes + e.branch;
            add(e.a, row, 1);
            add(e.b, row, -1);
            add(row, e.a, 1);
            add(row, e.b, -1);
            break;
        }
        case Element::Type::pwm:
        case Element::Type::diode: {
            int row = b.n_nodes + e.branch;
            add(e.a, row, 1);
            add(e.b, row, -1);
            bool closed = (bits >> e.bit) & 1;
            if (closed) { // short: v_a - v_b = 0
                add(row, e.a, 1);
                add(row, e.b, -1);
            } else { // open: branch current forced to zero
                A(row, row) += 1;
            }
            break;
        }
        }
    }
    return A;
}

bool pair_settled(const Eigen::VectorXd& prev, const Eigen::VectorXd& cur, double tol) {
    if (prev.size() != cur.size())
        throw EngineError("cycle vectors differ in length");
    if (cur.size() == 0)
        return tol > 0;
    double diff = std::sqrt((cur - prev).squaredNorm() / static_cast<double>(cur.size()));
    double norm = std::sqrt(cur.squaredNorm() / static_cast<double>(cur.size()));
    return diff < tol * std::max(norm, kRmsFloor);
}

// Best rational p/q approximation of x by continued fractions, accepted when
// |x - p/q| <= rel_tol * x (with float-rounding slack so the boundary is
// inclusive). Denominators are capped: a ratio that needs q beyond the cap is
// treated as irrational rather than yielding an absurd common period.
std::optional<std::pair<long long, long long>> best_rational(double x, double rel_tol) {
    constexpr long long kMaxDenominator = 10'000;
    if (!(x > 0) || !std::isfinite(x))
        return std::nullopt;
    auto close_enough = [&](long long p, long long q) {
        if (q <= 0)
            return false;
        double err = std::abs(x - static_cast<double>(p) / static_cast<double>(q));
        return err <= rel_tol * x + 8 * std::numeric_limits<double>::epsilon() * x;
    };
    long long p0 = 1, q0 = 0;
    long long p1 = static_cast<long long>(std::floor(x)), q1 = 1;
    double frac = x - std::floor(x);
    for (int it = 0; it < 64; ++it) {
        if (close_enough(p1, q1))
            return std::make_pair(p1, q1);
        if (frac <= 0)
            break;
        double inv = 1.0 / frac;
        double af = std::floor(inv);
        if (af > 1e15)
            break;
        long long a = static_cast<long long>(af);
        frac = inv - af;
        long long p2 = a * p1 + p0;
        long long q2 = a * q1 + q0;
        if (q2 > kMaxDenominator)
            break;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
    }
    if (close_enough(p1, q1))
        return std::make_pair(p1, q1);
    return std::nullopt;
}

std::vector<double> switch_frequencies(const netlist::Netlist& n) {
    std::vector<double> freqs;
    for (const auto& c : n.components)
        if (const auto* s = std::get_if<netlist::PwmSwitch>(&c.kind))
            freqs.push_back(s->frequency_hz);
    return freqs;
}

struct Simulator {
    const Build& b;
    const SimConfig& cfg;
    double dt;
    std::int64_t steps_per_cycle;

    Eigen::VectorXd x, rhs;
    Eigen::VectorXd st_i, st_v, ieq; // companion state, one slot per L/C
    std::uint64_t diode_bits = 0;
    std::uint64_t prev_sw_bits = 0;
    bool first_step = true;

    std::vector<std::vector<char>> schedules; // per switch, over one common cycle
    std::vector<const Element*> switches, diodes, sources, resistors, reactives;

    struct Factor {
        Eigen::FullPivLU<Eigen::MatrixXd> lu;
        bool singular = false;
    };
    std::unordered_map<std::uint64_t, Factor> factors;
    std::unordered_set<std::uint64_t> seen_bits;

    SimDiagnostics diag;

    Simulator(const Build& build, const SimConfig& config, double dt_s,
              std::int64_t steps)
        : b(build), cfg(config), dt(dt_s), steps_per_cycle(steps) {
        const int n = b.n_nodes + b.n_branches;
        x = Eigen::VectorXd::Zero(n);
        rhs = Eigen::VectorXd::Zero(n);
        st_i = Eigen::VectorXd::Zero(b.n_states);
        st_v = Eigen::VectorXd::Zero(b.n_states);
        ieq = Eigen::VectorXd::Zero(b.n_states);
        for (const auto& e : b.elements) {
            switch (e.type) {
            case Element::Type::pwm: switches.push_back(&e); break;
            case Element::Type::diode: diodes.push_back(&e); break;
            case Element::Type::source: sources.push_back(&e); break;
            case Element::Type::resistor: resistors.push_back(&e); break;
            default: reactives.push_back(&e); break;
            }
        }
        build_schedules();
        diag.switch_count = b.n_switches;
        diag.diode_count = b.n_diodes;
    }

    void build_schedules() {
        schedules.assign(switches.size(), std::vector<char>(steps_per_cycle, 0));
        for (size_t s = 0; s < switches.size(); ++s) {
            const Element& e = *switches[s];
            std::int64_t on_count = 0;
            for (std::int64_t k = 0; k < steps_per_cycle; ++k) {
                double pos = std::fmod((static_cast<double>(k) + 0.5) * dt * e.frequency -
                                           e.phase,
                                       1.0);
                if (pos < 0)
                    pos += 1.0;
                bool closed = pos < e.duty;
                schedules[s][k] = closed;
                on_count += closed;
            }
            double realized = static_cast<double>(on_count) /
                              static_cast<double>(steps_per_cycle);
            diag.duty_quantization_error =
                std::max(diag.duty_quantization_error, std::abs(realized - e.duty));
        }
    }

    double volt(int node) const { return node < 0 ? 0.0 : x[node]; }

    Factor& factor_for(std::uint64_t bits, Rule rule) {
        std::uint64_t key = bits * 2 + (rule == Rule::backward_euler ? 1 : 0);
        auto it = factors.find(key);
        if (it != factors.end())
            return it->second;
        seen_bits.insert(bits);
        Factor f;
        f.lu.compute(assemble(b, dt, bits, rule));
        f.singular = !f.lu.isInvertible();
        return factors.emplace(key, std::move(f)).first->second;
    }

    void build_rhs(Rule rule) {
        rhs.setZero();
        for (const Element* ep : sources)
            rhs[b.n_nodes + ep->branch] = ep->value;
        for (const Element* ep : reactives) {
            const Element& e = *ep;
            double g = companion_g(e, dt, rule);
            double i_eq;
            if (e.type == Element::Type::inductor)
                i_eq = rule == Rule::trapezoidal ? st_i[e.state] + g * st_v[e.state]
                                                 : st_i[e.state];
            else
                i_eq = rule == Rule::trapezoidal ? -g * st_v[e.state] - st_i[e.state]
                                                 : -g * st_v[e.state];
            ieq[e.state] = i_eq;
            if (e.a >= 0)
                rhs[e.a] -= i_eq;
            if (e.b >= 0)
                rhs[e.b] += i_eq;
        }
    }

    void step(std::int64_t global_step) {
        const std::int64_t k = global_step % steps_per_cycle;
        std::uint64_t sw_bits = 0;
        for (size_t s = 0; s < switches.size(); ++s)
            if (schedules[s][k])
                sw_bits |= std::uint64_t{1} << switches[s]->bit;

        Rule rule = (first_step || sw_bits != prev_sw_bits) ? Rule::backward_euler
                                                            : Rule::trapezoidal;
        int flips = 0;
        for (;;) {
            std::uint64_t bits = sw_bits | diode_bits;
            Factor& f = factor_for(bits, rule);
            if (f.singular) {
                // A closing switch can short out a conducting diode; turning the
                // diode off restores a solvable system.
                if (diode_bits != 0) {
                    std::uint64_t lowest = diode_bits & (~diode_bits + 1);
                    diode_bits &= ~lowest;
                    rule = Rule::backward_euler;
                    if (++flips > cfg.max_diode_flips_per_step)
                        throw DiodeOscillationError(
                            "diode states failed to settle at step " +
                            std::to_string(global_step));
                    continue;
                }
                throw SingularSystemError("singular system matrix at step " +
                                          std::to_string(global_step));
            }
            build_rhs(rule);
            x = f.lu.solve(rhs);

            std::uint64_t new_bits = diode_bits;
            for (const Element* dp : diodes) {
                const std::uint64_t mask = std::uint64_t{1} << dp->bit;
                if (diode_bits & mask) {
                    if (x[b.n_nodes + dp->branch] < -kFlipThreshold)
                        new_bits &= ~mask;
                } else {
                    if (volt(dp->a) - volt(dp->b) > kFlipThreshold)
                        new_bits |= mask;
                }
            }
            if (new_bits == diode_bits)
                break;
            if (++flips > cfg.max_diode_flips_per_step)
                throw DiodeOscillationError("diode states failed to settle at step " +
                                            std::to_string(global_step));
            diode_bits = new_bits;
            rule = Rule::backward_euler;
        }

        if (rule == Rule::backward_euler)
            ++diag.backward_euler_steps;

        for (const Element* ep : reactives) {
            const Element& e = *ep;
            double v_ab = volt(e.a) - volt(e.b);
            double g = companion_g(e, dt, rule);
            st_i[e.state] = g * v_ab + ieq[e.state];
            st_v[e.state] = v_ab;
        }
        for (const Element* dp : diodes) {
            if (diode_bits & (std::uint64_t{1} << dp->bit)) {
                double i = x[b.n_nodes + dp->branch];
                diag.max_diode_current_residual_amps =
                    std::max(diag.max_diode_current_residual_amps, -i);
            } else {
                double v = volt(dp->a) - volt(dp->b);
                diag.max_diode_voltage_residual_volts =
                    std::max(diag.max_diode_voltage_residual_volts, v);
            }
        }
        prev_sw_bits = sw_bits;
        first_step = false;
    }

    double source_power_delivered() const {
        double p = 0;
        for (const Element* ep : sources)
            p += (volt(ep->a) - volt(ep->b)) * -x[b.n_nodes + ep->branch];
        return p;
    }

    double resistor_power() const {
        double p = 0;
        for (const Element* ep : resistors) {
            double v = volt(ep->a) - volt(ep->b);
            p += v * v / ep->value;
        }
        return p;
    }
};

} // namespace

void validate(const SimConfig& cfg) {
    if (cfg.steps_per_switch_period < 2)
        throw EngineError("steps_per_switch_period must be at least 2");
    if (cfg.dt_seconds && !(*cfg.dt_seconds > 0))
        throw EngineError("dt must be positive");
    if (cfg.capture_cycles < 1)
        throw EngineError("capture_cycles must be at least 1");
    if (cfg.total_cycles < cfg.capture_cycles)
        throw EngineError("total_cycles must be at least capture_cycles");
    if (cfg.settle_tolerance < 0)
        throw EngineError("settle_tolerance must be non-negative");
    if (cfg.max_diode_flips_per_step < 1)
        throw EngineError("max_diode_flips_per_step must be at least 1");
}

const std::vector<double>* Waveforms::signal(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name)
            return &signals[i];
    return nullptr;
}

std::string to_csv(const Waveforms& w) {
    std::ostringstream os;
    os << "t_s";
    for (const auto& name : w.names)
        os << ',' << name;
    os << '\n';
    const size_t rows = w.samples();
    for (size_t i = 0; i < rows; ++i) {
        os << format_double(w.t0_seconds + static_cast<double>(i) * w.dt_seconds);
        for (const auto& sig : w.signals)
            os << ',' << format_double(sig[i]);
        os << '\n';
    }
    return os.str();
}

double common_period(const netlist::Netlist& n) {
    auto freqs = switch_frequencies(n);
    if (freqs.empty())
        throw EngineError("netlist has no switches: common period undefined");
    double lcm = 1.0 / freqs[0];
    for (size_t i = 1; i < freqs.size(); ++i) {
        double period = 1.0 / freqs[i];
        double ratio = lcm / period;
        auto pq = best_rational(ratio, 1e-9);
        if (!pq)
            throw IncommensurateFrequencies(
                "switch frequencies are not rational multiples: " +
                format_double(freqs[0]) + " Hz vs " + format_double(freqs[i]) + " Hz");
        lcm *= static_cast<double>(pq->second);
    }
    return lcm;
}

std::optional<std::size_t> detect_steady_state(const std::vector<Eigen::VectorXd>& cycles,
                                               double settle_tolerance) {
    for (std::size_t k = 1; k < cycles.size(); ++k)
        if (pair_settled(cycles[k - 1], cycles[k], settle_tolerance))
            return k;
    return std::nullopt;
}

TransientResult run_transient(const netlist::Netlist& n, const SimConfig& cfg) {
    netlist::validate(n);
    validate(cfg);
    Build b = build_elements(n);

    auto freqs = switch_frequencies(n);
    double dt, period;
    std::int64_t steps_per_cycle;
    if (freqs.empty()) {
        dt = cfg.dt_seconds.value_or(1e-6);
        steps_per_cycle = cfg.steps_per_switch_period;
        period = dt * static_cast<double>(steps_per_cycle);
    } else {
        period = common_period(n);
        double fastest = 1.0 / *std::max_element(freqs.begin(), freqs.end());
        std::int64_t spp = cfg.steps_per_switch_period;
        if (cfg.dt_seconds)
            spp = std::llround(fastest / *cfg.dt_seconds);
        if (spp < 2)
            throw EngineError("time step too coarse for the fastest switch period");
        dt = fastest / static_cast<double>(spp);
        steps_per_cycle = std::llround(period / dt);
        if (steps_per_cycle > 50'000'000)
            throw EngineError("common period needs too many steps per cycle");
    }

    Simulator sim(b, cfg, dt, steps_per_cycle);

    // Probe resolution.
    struct ProbeRef {
        bool is_node;
        int node = -1;
        int elem = -1;
    };
    std::vector<ProbeRef> refs;
    for (const auto& p : n.probes) {
        ProbeRef r;
        if (p.kind == netlist::ProbeKind::node_voltage) {
            r.is_node = true;
            auto it = b.node_index.find(p.target);
            r.node = it == b.node_index.end() ? -1 : it->second; // ground -> -1
        } else {
            r.is_node = false;
            r.elem = b.element_of_id.at(p.target);
        }
        refs.push_back(r);
    }
    auto probe_value = [&](const ProbeRef& r) -> double {
        if (r.is_node)
            return sim.volt(r.node);
        const Element& e = b.elements[static_cast<size_t>(r.elem)];
        switch (e.type) {
        case Element::Type::source:
        case Element::Type::pwm:
        case Element::Type::diode:
            return sim.x[b.n_nodes + e.branch];
        case Element::Type::inductor:
        case Element::Type::capacitor:
            return sim.st_i[e.state];
        default:
            return (sim.volt(e.a) - sim.volt(e.b)) / e.value;
        }
    };

    const std::int64_t sig_len = static_cast<std::int64_t>(b.n_states) * steps_per_cycle;
    Eigen::VectorXd prev_sig = Eigen::VectorXd::Zero(sig_len);
    Eigen::VectorXd cur_sig = Eigen::VectorXd::Zero(sig_len);

    TransientResult out;
    out.waveforms.dt_seconds = dt;
    out.waveforms.switch_period_seconds = period;
    for (const auto& p : n.probes) {
        out.waveforms.names.push_back(p.name);
        out.waveforms.signals.emplace_back();
    }
    const std::int64_t capture_samples =
        static_cast<std::int64_t>(cfg.capture_cycles) * steps_per_cycle;
    for (auto& sig : out.waveforms.signals)
        sig.reserve(static_cast<size_t>(capture_samples));

    const std::int64_t deadline_start = cfg.total_cycles - cfg.capture_cycles;
    std::int64_t capture_start = -1;
    if (deadline_start == 0) {
        // No budget left for settling: everything is capture.
        sim.diag.steady_state_warning = true;
        capture_start = 0;
    }
    double src_power_sum = 0, res_power_sum = 0;

    for (std::int64_t cycle = 0;; ++cycle) {
        const bool capturing = capture_start >= 0 && cycle >= capture_start;
        for (std::int64_t k = 0; k < steps_per_cycle; ++k) {
            sim.step(cycle * steps_per_cycle + k);
            // State sample per step: inductor currents and capacitor voltages.
            for (const Element* ep : sim.reactives)
                cur_sig[k * b.n_states + ep->state] =
                    ep->type == Element::Type::inductor ? sim.st_i[ep->state]
                                                        : sim.st_v[ep->state];
            if (capturing) {
                for (size_t pi = 0; pi < refs.size(); ++pi)
                    out.waveforms.signals[pi].push_back(probe_value(refs[pi]));
                src_power_sum += sim.source_power_delivered();
                res_power_sum += sim.resistor_power();
            }
        }
        if (capturing && cycle == capture_start + cfg.capture_cycles - 1) {
            sim.diag.total_steps = (cycle + 1) * steps_per_cycle;
            break;
        }
        if (capture_start < 0) {
            if (cycle >= 1 && pair_settled(prev_sig, cur_sig, cfg.settle_tolerance)) {
                sim.diag.settled = true;
                sim.diag.settle_cycle = cycle;
                capture_start = cycle + 1;
            } else if (cycle + 1 == deadline_start) {
                sim.diag.steady_state_warning = true;
                capture_start = deadline_start;
            }
            std::swap(prev_sig, cur_sig);
        }
    }

    out.waveforms.t0_seconds = static_cast<double>(capture_start) *
                               static_cast<double>(steps_per_cycle) * dt;
    sim.diag.mean_source_power_watts =
        src_power_sum / static_cast<double>(capture_samples);
    sim.diag.mean_resistor_power_watts =
        res_power_sum / static_cast<double>(capture_samples);
    sim.diag.topology_state_count = static_cast<int>(sim.seen_bits.size());
    out.diagnostics = sim.diag;
    return out;
}

} // namespace emi::engine

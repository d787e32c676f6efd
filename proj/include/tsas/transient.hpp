#pragma once

// Classical-model transient simulation: pre-fault equilibrium, swing-equation
// integration through the fault stages, per-cycle bus phasor sampling and the
// rotor-angle stability label.

#include <optional>
#include <ostream>

#include "tsas/grid.hpp"
#include "tsas/rk4.hpp"

namespace tsas {

struct SwingState {
    Eigen::VectorXd angles;  // rotor angles, rad
    Eigen::VectorXd speeds;  // speed deviations, rad/s
    double time = 0.0;       // s
};

/// Swing dynamics on a network reduced to the machine internal nodes:
/// d(delta)/dt = omega, M d(omega)/dt = Pm - Pe(delta) - D omega, M = 2H / omega_base.
struct SwingNetwork {
    Eigen::MatrixXcd reduced;  // machine-node admittance
    Eigen::VectorXd emf;       // |E'|
    Eigen::VectorXd pm;
    Eigen::VectorXd inertia;   // M
    Eigen::VectorXd damping;   // D

    std::size_t machine_count() const { return static_cast<std::size_t>(emf.size()); }

    Eigen::VectorXcd emf_phasors(const Eigen::VectorXd& angles) const {
        Eigen::VectorXcd e(emf.size());
        for (Eigen::Index i = 0; i < emf.size(); ++i) e(i) = std::polar(emf(i), angles(i));
        return e;
    }

    Eigen::VectorXd electrical_power(const Eigen::VectorXd& angles) const {
        const Eigen::VectorXcd e = emf_phasors(angles);
        const Eigen::VectorXcd current = reduced * e;
        Eigen::VectorXd pe(e.size());
        for (Eigen::Index i = 0; i < e.size(); ++i) pe(i) = (e(i) * std::conj(current(i))).real();
        return pe;
    }

    /// d(Pe_i)/d(delta_k).
    Eigen::MatrixXd power_jacobian(const Eigen::VectorXd& angles) const {
        const Eigen::VectorXcd e = emf_phasors(angles);
        const Eigen::VectorXcd current = reduced * e;
        const auto n = e.size();
        Eigen::MatrixXd jac(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index k = 0; k < n; ++k) {
                if (i == k)
                    jac(i, k) = -(e(i) * std::conj(current(i))).imag() +
                                (e(i) * std::conj(reduced(i, i) * e(i))).imag();
                else
                    jac(i, k) = (e(i) * std::conj(reduced(i, k) * e(k))).imag();
            }
        }
        return jac;
    }
};

inline SwingState rk4_step(const SwingState& state, const SwingNetwork& net, double dt) {
    const auto n = static_cast<Eigen::Index>(net.machine_count());
    Eigen::VectorXd y(2 * n);
    y << state.angles, state.speeds;
    auto rhs = [&net, n](double, const Eigen::VectorXd& s) {
        const Eigen::VectorXd angles = s.head(n);
        const Eigen::VectorXd speeds = s.tail(n);
        const Eigen::VectorXd pe = net.electrical_power(angles);
        Eigen::VectorXd d(2 * n);
        d.head(n) = speeds;
        d.tail(n) = ((net.pm - pe - net.damping.cwiseProduct(speeds)).array() / net.inertia.array())
                        .matrix();
        return d;
    };
    const Eigen::VectorXd next = rk4_advance(y, state.time, dt, rhs);
    return SwingState{next.head(n), next.tail(n), state.time + dt};
}

// --- network with machines and loads -------------------------------------

/// Adds constant-admittance loads and machine internal nodes to a network
/// admittance. Node order: the network's nodes, then one internal node per
/// machine. Loads and machine terminals attach to bus indices.
inline AdmittanceMatrix augment_network(const GridCase& grid, const AdmittanceMatrix& network,
                                        const Eigen::VectorXcd& load_admittance) {
    const std::size_t nn = network.order();
    const std::size_t nm = grid.machine_count();
    require(nn >= grid.bus_count(), "network smaller than the bus set");
    auto full = AdmittanceMatrix::zero(nn + nm);
    full.values.topLeftCorner(nn, nn) = network.values;
    for (std::size_t k = 0; k < grid.bus_count(); ++k) full.values(k, k) += load_admittance(k);
    for (std::size_t i = 0; i < nm; ++i) {
        const auto bus = grid.bus_index(grid.machines[i].bus);
        const Complex y = 1.0 / Complex(0.0, grid.machines[i].xd_prime);
        full.values(bus, bus) += y;
        full.values(nn + i, nn + i) += y;
        full.values(bus, nn + i) -= y;
        full.values(nn + i, bus) -= y;
    }
    return full;
}

inline std::vector<std::size_t> internal_nodes(const AdmittanceMatrix& full, std::size_t machines) {
    std::vector<std::size_t> keep(machines);
    for (std::size_t i = 0; i < machines; ++i) keep[i] = full.order() - machines + i;
    return keep;
}

/// Swing model for one network stage (loads already converted to admittances).
inline SwingNetwork make_swing_network(const GridCase& grid, const AdmittanceMatrix& network,
                                       const Eigen::VectorXcd& load_admittance,
                                       const Eigen::VectorXd& pm) {
    const auto full = augment_network(grid, network, load_admittance);
    const auto nm = grid.machine_count();
    SwingNetwork net;
    net.reduced = kron_reduce(full, internal_nodes(full, nm)).values;
    net.emf.resize(nm);
    net.inertia.resize(nm);
    net.damping.resize(nm);
    for (std::size_t i = 0; i < nm; ++i) {
        net.emf(i) = grid.machines[i].emf;
        net.inertia(i) = 2.0 * grid.machines[i].inertia / grid.omega_base();
        net.damping(i) = grid.machines[i].damping;
    }
    net.pm = pm;
    return net;
}

struct PhasorFrame {
    std::vector<double> magnitudes;  // per-unit
    std::vector<double> angles;      // rad, wrapped to (-pi, pi]
    int cycle_index = 0;
};

/// Solves network node voltages given machine EMF phasors:
/// Y_nn V_n = -Y_ni E. Factorizes once per network stage.
class PhasorSolver {
public:
    PhasorSolver(const AdmittanceMatrix& full, std::size_t machines, std::size_t buses)
        : full_(full), machines_(machines), buses_(buses) {
        const auto nn = static_cast<Eigen::Index>(full.order() - machines);
        lu_.compute(full.values.topLeftCorner(nn, nn));
        if (!lu_.isInvertible()) throw Error("network is singular; cannot solve bus phasors");
        coupling_ = full.values.topRightCorner(nn, static_cast<Eigen::Index>(machines));
    }

    Eigen::VectorXcd node_voltages(const Eigen::VectorXcd& emf) const {
        return lu_.solve(-coupling_ * emf);
    }

    PhasorFrame frame(const Eigen::VectorXcd& emf, int cycle_index) const {
        const Eigen::VectorXcd v = node_voltages(emf);
        PhasorFrame f;
        f.cycle_index = cycle_index;
        f.magnitudes.resize(buses_);
        f.angles.resize(buses_);
        for (std::size_t b = 0; b < buses_; ++b) {
            f.magnitudes[b] = std::abs(v(b));
            f.angles[b] = f.magnitudes[b] > 0.0 ? wrap_angle(std::arg(v(b))) : 0.0;
        }
        return f;
    }

    /// Max |injected current| at the non-source nodes for a solved voltage vector.
    double residual(const Eigen::VectorXcd& emf) const {
        Eigen::VectorXcd all(full_.order());
        all << node_voltages(emf), emf;
        const Eigen::VectorXcd current = full_.values * all;
        return current.head(full_.order() - machines_).cwiseAbs().maxCoeff();
    }

private:
    AdmittanceMatrix full_;
    std::size_t machines_;
    std::size_t buses_;
    Eigen::FullPivLU<Eigen::MatrixXcd> lu_;
    Eigen::MatrixXcd coupling_;
};

/// Bus phasors for a swing state on the given network stage.
inline PhasorFrame compute_bus_phasors(const SwingState& state, const GridCase& grid,
                                       const AdmittanceMatrix& full, int cycle_index = 0) {
    PhasorSolver solver(full, grid.machine_count(), grid.bus_count());
    Eigen::VectorXcd emf(grid.machine_count());
    for (std::size_t i = 0; i < grid.machine_count(); ++i)
        emf(i) = std::polar(grid.machines[i].emf, state.angles(i));
    return solver.frame(emf, cycle_index);
}

// --- equilibrium ----------------------------------------------------------

struct Equilibrium {
    SwingState state;
    Eigen::VectorXcd load_admittance;  // per bus
    Eigen::VectorXd pm;                // dispatch with the slack machine balanced
    std::size_t slack = 0;
    Eigen::VectorXcd bus_voltages;
};

/// Slack (angle reference) machine: the one with the largest inertia.
inline std::size_t slack_machine(const GridCase& grid) {
    require(grid.machine_count() > 0, "grid has no machines");
    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.machine_count(); ++i)
        if (grid.machines[i].inertia > grid.machines[best].inertia) best = i;
    return best;
}

namespace detail {

// Newton solve for the non-slack rotor angles with Pe = Pm; the slack angle is held.
inline void solve_rotor_angles(const GridCase& grid, const SwingNetwork& net, std::size_t slack,
                               Eigen::VectorXd& angles) {
    const auto nm = static_cast<Eigen::Index>(grid.machine_count());
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < nm; ++i)
        if (i != static_cast<Eigen::Index>(slack)) free.push_back(i);
    const auto nf = static_cast<Eigen::Index>(free.size());

    bool converged = nf == 0;
    Eigen::VectorXd mismatch = net.electrical_power(angles) - net.pm;
    for (int it = 0; it < 100 && !converged; ++it) {
        Eigen::VectorXd f(nf);
        Eigen::MatrixXd jf(nf, nf);
        const Eigen::MatrixXd jac = net.power_jacobian(angles);
        for (Eigen::Index r = 0; r < nf; ++r) {
            f(r) = mismatch(free[r]);
            for (Eigen::Index c = 0; c < nf; ++c) jf(r, c) = jac(free[r], free[c]);
        }
        Eigen::VectorXd step = jf.fullPivLu().solve(-f);
        if (!step.allFinite()) break;
        const double largest = step.cwiseAbs().maxCoeff();
        if (largest > 0.3) step *= 0.3 / largest;
        for (Eigen::Index r = 0; r < nf; ++r) angles(free[r]) += step(r);
        mismatch = net.electrical_power(angles) - net.pm;
        double worst = 0.0;
        for (auto i : free) worst = std::max(worst, std::abs(mismatch(i)));
        converged = worst < 1e-12 && largest < 1e-10;
    }
    double worst = 0.0;
    Eigen::Index worst_machine = static_cast<Eigen::Index>(slack);
    for (auto i : free) {
        if (std::abs(mismatch(i)) > worst) {
            worst = std::abs(mismatch(i));
            worst_machine = i;
        }
    }
    if (!converged && worst > 1e-9)
        throw Error("no pre-fault equilibrium: machine " + std::to_string(worst_machine) + " at bus " +
                    std::to_string(grid.machines[worst_machine].bus) +
                    " cannot balance its dispatch (mismatch " + std::to_string(worst) + " pu)");
    for (Eigen::Index i = 0; i < nm; ++i)
        if (std::abs(angles(i) - angles(slack)) > std::numbers::pi / 2.0)
            throw Error("no stable pre-fault equilibrium: machine " + std::to_string(i) + " at bus " +
                        std::to_string(grid.machines[i].bus) +
                        " exceeds 90 degrees from the reference");
}

}  // namespace detail

/// Steady state with zero speed deviation and Pe = Pm at every machine. The
/// slack machine (largest H) is the angle reference and its Pm absorbs the
/// network balance.
///
/// Loads are constant admittances. When `load_admittance` is not supplied they
/// are derived from the demands at the operating voltage by fixed-point
/// iteration around the rotor-angle Newton solve.
inline Equilibrium solve_prefault_equilibrium(
    const GridCase& grid, const AdmittanceMatrix& network,
    const std::optional<Eigen::VectorXcd>& load_admittance = std::nullopt) {
    const auto nm = grid.machine_count();
    const auto nb = grid.bus_count();
    require(nm > 0, "grid has no machines");
    const std::size_t slack = slack_machine(grid);

    Eigen::VectorXd pm(nm);
    for (std::size_t i = 0; i < nm; ++i) pm(i) = grid.machines[i].pm;
    Eigen::VectorXcd load_power = Eigen::VectorXcd::Zero(nb);
    for (const auto& l : grid.loads) load_power(grid.bus_index(l.bus)) += l.power;
    if (load_admittance)
        require(load_admittance->size() == static_cast<Eigen::Index>(nb),
                "load admittance vector must have one entry per bus");

    Eigen::VectorXd angles = Eigen::VectorXd::Zero(nm);
    Eigen::VectorXd voltage_mag = Eigen::VectorXd::Ones(nb);
    Eigen::VectorXcd load_adm(nb);
    Eigen::VectorXcd bus_v;
    SwingNetwork net;

    const bool iterate_loads = !load_admittance && load_power.cwiseAbs().maxCoeff() > 0.0;
    for (int outer = 0;; ++outer) {
        if (load_admittance) {
            load_adm = *load_admittance;
        } else {
            for (std::size_t k = 0; k < nb; ++k)
                load_adm(k) = std::conj(load_power(k)) / (voltage_mag(k) * voltage_mag(k));
        }
        net = make_swing_network(grid, network, load_adm, pm);
        detail::solve_rotor_angles(grid, net, slack, angles);

        const PhasorSolver solver(augment_network(grid, network, load_adm), nm, nb);
        bus_v = solver.node_voltages(net.emf_phasors(angles)).head(nb);
        if (!iterate_loads) break;
        const Eigen::VectorXd new_mag = bus_v.cwiseAbs();
        const double change = (new_mag - voltage_mag).cwiseAbs().maxCoeff();
        voltage_mag = new_mag;
        if (change < 1e-13) break;
        if (outer == 300 || voltage_mag.minCoeff() < 0.5)
            throw Error("load voltage iteration did not converge (voltage collapse with fixed EMFs)");
    }

    pm(slack) = net.electrical_power(angles)(slack);
    Equilibrium eq;
    eq.state = SwingState{angles, Eigen::VectorXd::Zero(nm), 0.0};
    eq.load_admittance = load_adm;
    eq.pm = pm;
    eq.slack = slack;
    eq.bus_voltages = bus_v;
    return eq;
}

inline Equilibrium solve_prefault_equilibrium(const GridCase& grid) {
    return solve_prefault_equilibrium(grid, build_admittance(grid));
}

/// Constant load admittances of a grid at its own intact-network operating voltage.
inline Eigen::VectorXcd operating_load_admittance(const GridCase& grid) {
    return solve_prefault_equilibrium(grid).load_admittance;
}

// --- simulation -----------------------------------------------------------

struct SimulationConfig {
    double dt = 1e-3;                // integration step, s
    double fault_time = 0.1;         // fault inception, s
    double post_fault_horizon = 5.0; // s after clearance over which delta_max is tracked
    int cycles_needed = 20;          // frames sampled after clearance
    double cycle_rate = 0.0;         // Hz; 0 uses the grid base frequency
};

struct TrajectoryRecord {
    std::vector<PhasorFrame> frames;
    std::vector<std::vector<double>> rotor_angles;  // per frame, rad
    std::vector<double> frame_times;                // s
    double delta_max = 0.0;                         // degrees
    double sim_duration = 0.0;                      // s
};

namespace detail {

// Fixed-step integration up to t_end; the final step is shortened to land on t_end.
template <class Observer>
void integrate_to(SwingState& state, const SwingNetwork& net, double t_end, double dt,
                  Observer&& observe) {
    const double t_start = state.time;
    const double span = t_end - t_start;
    if (span <= 0.0) return;
    const auto steps = static_cast<long>(std::ceil(span / dt - 1e-9));
    for (long j = 1; j <= steps; ++j) {
        const double target = j == steps ? t_end : t_start + static_cast<double>(j) * dt;
        state = rk4_step(state, net, target - state.time);
        state.time = target;
        observe(state);
    }
}

inline double angle_spread_degrees(const Eigen::VectorXd& angles) {
    return degrees(angles.maxCoeff() - angles.minCoeff());
}

}  // namespace detail

/// Integrates pre-fault hold, fault-on and post-fault stages; samples one
/// frame per cycle after clearance and tracks the largest pairwise
/// rotor-angle difference over the whole run.
inline TrajectoryRecord simulate_case(
    const GridCase& grid, const ContingencyPhases& phases, const SimulationConfig& config = {},
    const std::optional<Eigen::VectorXcd>& load_admittance = std::nullopt) {
    require(config.dt > 0.0, "integration step must be positive");
    require(config.cycles_needed >= 0, "cycles_needed must be nonnegative");
    const double rate = config.cycle_rate > 0.0 ? config.cycle_rate : grid.base_frequency;
    require(config.post_fault_horizon + 1e-12 >= config.cycles_needed / rate,
            "simulation horizon shorter than the requested sampling window");

    const Equilibrium eq = solve_prefault_equilibrium(grid, phases.prefault, load_admittance);
    const auto pre = make_swing_network(grid, phases.prefault, eq.load_admittance, eq.pm);
    const auto during = make_swing_network(grid, phases.fault_on, eq.load_admittance, eq.pm);
    const auto post = make_swing_network(grid, phases.postfault, eq.load_admittance, eq.pm);
    const PhasorSolver post_solver(augment_network(grid, phases.postfault, eq.load_admittance),
                                   grid.machine_count(), grid.bus_count());

    TrajectoryRecord record;
    SwingState state = eq.state;
    double spread = detail::angle_spread_degrees(state.angles);
    auto observe = [&spread](const SwingState& s) {
        spread = std::max(spread, detail::angle_spread_degrees(s.angles));
    };

    const double t_clear = config.fault_time + phases.clearing_time;
    detail::integrate_to(state, pre, config.fault_time, config.dt, observe);
    detail::integrate_to(state, during, t_clear, config.dt, observe);
    for (int k = 1; k <= config.cycles_needed; ++k) {
        const double t_sample = t_clear + static_cast<double>(k) / rate;
        detail::integrate_to(state, post, t_sample, config.dt, observe);
        record.frames.push_back(post_solver.frame(post.emf_phasors(state.angles), k));
        record.rotor_angles.emplace_back(state.angles.data(), state.angles.data() + state.angles.size());
        record.frame_times.push_back(state.time);
    }
    detail::integrate_to(state, post, t_clear + config.post_fault_horizon, config.dt, observe);

    record.delta_max = spread;
    record.sim_duration = state.time;
    return record;
}

struct StabilityLabel {
    double eta = 1.0;
    int y = 1;  // 1 stable, 0 unstable
};

/// eta = (360 - delta_max) / (360 + delta_max); stable iff eta > 0.
inline StabilityLabel label_from_delta_max(double delta_max) {
    require(delta_max >= 0.0, "delta_max must be nonnegative");
    const double eta = (360.0 - delta_max) / (360.0 + delta_max);
    return StabilityLabel{eta, eta > 0.0 ? 1 : 0};
}

inline StabilityLabel label_from_trajectory(const TrajectoryRecord& record) {
    return label_from_delta_max(record.delta_max);
}

/// CSV dump, one row per sampled cycle: cycle, time, magnitudes, angles, rotor angles.
inline void write_trajectory_csv(std::ostream& out, const GridCase& grid, const TrajectoryRecord& record) {
    out << "cycle,time";
    for (const auto& b : grid.buses) out << ",V" << b.id;
    for (const auto& b : grid.buses) out << ",theta" << b.id;
    for (std::size_t i = 0; i < grid.machine_count(); ++i) out << ",delta_g" << grid.machines[i].bus;
    out << '\n';
    char buf[64];
    for (std::size_t f = 0; f < record.frames.size(); ++f) {
        const auto& frame = record.frames[f];
        std::snprintf(buf, sizeof buf, "%d,%.6f", frame.cycle_index, record.frame_times[f]);
        out << buf;
        for (double v : frame.magnitudes) {
            std::snprintf(buf, sizeof buf, ",%.9f", v);
            out << buf;
        }
        for (double a : frame.angles) {
            std::snprintf(buf, sizeof buf, ",%.9f", a);
            out << buf;
        }
        for (double d : record.rotor_angles[f]) {
            std::snprintf(buf, sizeof buf, ",%.9f", d);
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace tsas

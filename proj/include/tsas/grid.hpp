#pragma once

// Network model: buses, branches, classical machines and loads, plus bus
// admittance assembly, Kron reduction and contingency network phases.

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "tsas/common.hpp"

namespace tsas {

struct Bus {
    int id = 0;
    Complex shunt{0.0, 0.0};  // per-unit admittance to ground
};

enum class BranchStatus { in_service, out_of_service };

struct Branch {
    int from = 0;
    int to = 0;
    Complex impedance{0.0, 0.1};  // series impedance r + jx, per-unit
    double charging = 0.0;        // total line-charging susceptance, split half per end
    BranchStatus status = BranchStatus::in_service;

    bool in_service() const { return status == BranchStatus::in_service; }
};

/// Classical machine: constant EMF magnitude behind transient reactance.
struct Machine {
    int bus = 0;
    double inertia = 1.0;    // H, seconds
    double damping = 0.0;    // D, per-unit power per rad/s of speed deviation
    double xd_prime = 0.1;   // X'd, per-unit
    double pm = 0.0;         // mechanical power, per-unit
    double emf = 1.0;        // |E'|, per-unit
};

struct Load {
    int bus = 0;
    Complex power{0.0, 0.0};  // P + jQ demand, per-unit
};

/// One operating point of a power network on a common MVA base.
struct GridCase {
    std::string name;
    double base_frequency = 60.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Machine> machines;
    std::vector<Load> loads;

    std::size_t bus_count() const { return buses.size(); }
    std::size_t machine_count() const { return machines.size(); }

    /// Position of a bus id in the bus list; throws for unknown ids.
    std::size_t bus_index(int id) const {
        for (std::size_t k = 0; k < buses.size(); ++k)
            if (buses[k].id == id) return k;
        throw Error("unknown bus id " + std::to_string(id));
    }

    double omega_base() const { return 2.0 * std::numbers::pi * base_frequency; }
};

/// Checks the structural invariants: ascending unique bus ids, known
/// endpoints, positive inertia and reactance, nonzero series impedances.
inline void validate(const GridCase& grid) {
    require(!grid.buses.empty(), "grid '" + grid.name + "' has no buses");
    require(grid.base_frequency > 0.0, "base frequency must be positive");
    for (std::size_t k = 1; k < grid.buses.size(); ++k)
        require(grid.buses[k - 1].id < grid.buses[k].id,
                "bus ids must be unique and listed in ascending order");
    for (const auto& br : grid.branches) {
        grid.bus_index(br.from);
        grid.bus_index(br.to);
        require(br.from != br.to, "branch endpoints must differ");
        require(std::abs(br.impedance) > 0.0, "branch series impedance must be nonzero");
    }
    for (const auto& m : grid.machines) {
        grid.bus_index(m.bus);
        require(m.inertia > 0.0, "machine inertia H must be positive");
        require(m.xd_prime > 0.0, "machine transient reactance must be positive");
        require(m.emf > 0.0, "machine EMF must be positive");
    }
    for (const auto& l : grid.loads) grid.bus_index(l.bus);
}

/// Dense complex bus admittance matrix in per-unit.
struct AdmittanceMatrix {
    Eigen::MatrixXcd values;

    AdmittanceMatrix() = default;
    explicit AdmittanceMatrix(Eigen::MatrixXcd v) : values(std::move(v)) {}
    static AdmittanceMatrix zero(std::size_t order) {
        return AdmittanceMatrix(Eigen::MatrixXcd::Zero(order, order));
    }

    std::size_t order() const { return static_cast<std::size_t>(values.rows()); }
    Complex operator()(std::size_t r, std::size_t c) const { return values(r, c); }
};

namespace detail {

// Pi-model stamp between node indices a and b.
inline void stamp_branch(Eigen::MatrixXcd& y, std::size_t a, std::size_t b, Complex z,
                         double charging, double sign = 1.0) {
    const Complex ys = 1.0 / z;
    const Complex half_b{0.0, charging / 2.0};
    y(a, a) += sign * (ys + half_b);
    y(b, b) += sign * (ys + half_b);
    y(a, b) -= sign * ys;
    y(b, a) -= sign * ys;
}

}  // namespace detail

/// Node index sets of the connected components over in-service branches.
inline std::vector<std::vector<std::size_t>> connected_components(const GridCase& grid) {
    const std::size_t n = grid.bus_count();
    std::vector<std::vector<std::size_t>> adjacency(n);
    for (const auto& br : grid.branches) {
        if (!br.in_service()) continue;
        const auto a = grid.bus_index(br.from);
        const auto b = grid.bus_index(br.to);
        adjacency[a].push_back(b);
        adjacency[b].push_back(a);
    }
    std::vector<int> component(n, -1);
    std::vector<std::vector<std::size_t>> components;
    for (std::size_t start = 0; start < n; ++start) {
        if (component[start] >= 0) continue;
        const int label = static_cast<int>(components.size());
        components.emplace_back();
        std::vector<std::size_t> stack{start};
        component[start] = label;
        while (!stack.empty()) {
            const auto node = stack.back();
            stack.pop_back();
            components.back().push_back(node);
            for (auto next : adjacency[node]) {
                if (component[next] < 0) {
                    component[next] = label;
                    stack.push_back(next);
                }
            }
        }
        std::sort(components.back().begin(), components.back().end());
    }
    return components;
}

inline bool is_connected(const GridCase& grid) { return connected_components(grid).size() <= 1; }

/// Throws an Error naming the bus ids cut off from the first bus's island.
inline void require_connected(const GridCase& grid) {
    const auto components = connected_components(grid);
    if (components.size() <= 1) return;
    std::ostringstream msg;
    msg << "network '" << grid.name << "' is disconnected; isolated buses {";
    bool first = true;
    for (std::size_t c = 1; c < components.size(); ++c) {
        for (auto node : components[c]) {
            msg << (first ? "" : ", ") << grid.buses[node].id;
            first = false;
        }
    }
    msg << "}";
    throw Error(msg.str());
}

/// Standard bus admittance assembly over in-service branches and bus shunts.
/// Loads and machines are not included.
inline AdmittanceMatrix build_admittance(const GridCase& grid, bool require_connectivity = true) {
    validate(grid);
    if (require_connectivity) require_connected(grid);
    auto y = AdmittanceMatrix::zero(grid.bus_count());
    for (std::size_t k = 0; k < grid.bus_count(); ++k) y.values(k, k) += grid.buses[k].shunt;
    for (const auto& br : grid.branches) {
        if (!br.in_service()) continue;
        detail::stamp_branch(y.values, grid.bus_index(br.from), grid.bus_index(br.to),
                             br.impedance, br.charging);
    }
    return y;
}

/// Schur complement onto `keep` (in the given order): Ykk - Yke Yee^-1 Yek.
inline AdmittanceMatrix kron_reduce(const AdmittanceMatrix& y, const std::vector<std::size_t>& keep) {
    const std::size_t n = y.order();
    std::vector<bool> kept(n, false);
    for (auto k : keep) {
        require(k < n, "kron_reduce: kept node out of range");
        require(!kept[k], "kron_reduce: duplicate kept node");
        kept[k] = true;
    }
    std::vector<std::size_t> elim;
    for (std::size_t k = 0; k < n; ++k)
        if (!kept[k]) elim.push_back(k);

    const auto nk = static_cast<Eigen::Index>(keep.size());
    const auto ne = static_cast<Eigen::Index>(elim.size());
    Eigen::MatrixXcd ykk(nk, nk), yke(nk, ne), yek(ne, nk), yee(ne, ne);
    for (Eigen::Index r = 0; r < nk; ++r) {
        for (Eigen::Index c = 0; c < nk; ++c) ykk(r, c) = y.values(keep[r], keep[c]);
        for (Eigen::Index c = 0; c < ne; ++c) yke(r, c) = y.values(keep[r], elim[c]);
    }
    for (Eigen::Index r = 0; r < ne; ++r) {
        for (Eigen::Index c = 0; c < nk; ++c) yek(r, c) = y.values(elim[r], keep[c]);
        for (Eigen::Index c = 0; c < ne; ++c) yee(r, c) = y.values(elim[r], elim[c]);
    }
    if (ne == 0) return AdmittanceMatrix(ykk);

    Eigen::FullPivLU<Eigen::MatrixXcd> lu(yee);
    if (!lu.isInvertible())
        throw Error("kron_reduce: eliminated block is singular (isolated eliminated node)");
    return AdmittanceMatrix(ykk - yke * lu.solve(yek));
}

// --- contingencies --------------------------------------------------------

/// Admittance of the grounding shunt representing a bolted three-phase fault.
inline constexpr double fault_shunt_admittance = 1.0e6;

/// Three-phase short circuit at a bus, or along a branch at a fraction of its length.
struct Fault {
    enum class Kind { bus, line };
    Kind kind = Kind::bus;
    int bus_id = 0;
    std::size_t branch = 0;
    double position = 0.5;  // fraction from the branch's `from` end

    static Fault at_bus(int id) { return Fault{Kind::bus, id, 0, 0.0}; }
    static Fault on_line(std::size_t branch, double position) {
        return Fault{Kind::line, 0, branch, position};
    }
};

/// Closed interval of admissible clearing times, seconds.
struct ClearingWindow {
    double min = 0.1;
    double max = 0.4;
};

/// Network admittances for the three stages of a contingency. For line
/// faults the fault-on matrix carries one extra node (the last index) at the
/// fault location; every other node index is a bus index of the grid.
struct ContingencyPhases {
    AdmittanceMatrix prefault;
    AdmittanceMatrix fault_on;
    AdmittanceMatrix postfault;
    double clearing_time = 0.1;
    std::size_t fault_node = 0;

    /// All three phases equal the unfaulted network.
    static ContingencyPhases unfaulted(const GridCase& grid, double clearing_time = 0.1) {
        const auto y = build_admittance(grid);
        return ContingencyPhases{y, y, y, clearing_time, 0};
    }
};

inline bool is_valid_fault_position(double position) {
    for (double allowed : {0.2, 0.4, 0.6, 0.8})
        if (std::abs(position - allowed) < 1e-12) return true;
    return false;
}

/// Builds pre-fault, fault-on and post-fault admittances. A line fault splits
/// the branch into two series segments meeting at a new fault node; clearing
/// removes the whole branch. A bus fault leaves the post-fault network intact.
/// The post-fault network may be islanded (separated machines then lose
/// synchronism in simulation).
inline ContingencyPhases apply_contingency_phases(const GridCase& grid, const Fault& fault,
                                                  double clearing_time,
                                                  ClearingWindow window = {}) {
    require(clearing_time >= window.min - 1e-12 && clearing_time <= window.max + 1e-12,
            "clearing time " + std::to_string(clearing_time) + " s outside [" +
                std::to_string(window.min) + ", " + std::to_string(window.max) + "]");
    ContingencyPhases phases;
    phases.clearing_time = clearing_time;
    phases.prefault = build_admittance(grid);
    const std::size_t n = grid.bus_count();

    if (fault.kind == Fault::Kind::bus) {
        const auto k = grid.bus_index(fault.bus_id);
        phases.fault_node = k;
        phases.fault_on = phases.prefault;
        phases.fault_on.values(k, k) += Complex(fault_shunt_admittance, 0.0);
        phases.postfault = phases.prefault;
        return phases;
    }

    require(fault.branch < grid.branches.size(),
            "fault branch " + std::to_string(fault.branch) + " does not exist");
    const Branch& br = grid.branches[fault.branch];
    require(br.in_service(), "fault on out-of-service branch " + std::to_string(fault.branch));
    require(is_valid_fault_position(fault.position),
            "line fault position must be one of 0.2, 0.4, 0.6, 0.8");
    const auto a = grid.bus_index(br.from);
    const auto b = grid.bus_index(br.to);

    phases.postfault = phases.prefault;
    detail::stamp_branch(phases.postfault.values, a, b, br.impedance, br.charging, -1.0);

    const double p = fault.position;
    phases.fault_node = n;
    phases.fault_on = AdmittanceMatrix::zero(n + 1);
    phases.fault_on.values.topLeftCorner(n, n) = phases.postfault.values;
    detail::stamp_branch(phases.fault_on.values, a, n, p * br.impedance, p * br.charging);
    detail::stamp_branch(phases.fault_on.values, n, b, (1.0 - p) * br.impedance,
                         (1.0 - p) * br.charging);
    phases.fault_on.values(n, n) += Complex(fault_shunt_admittance, 0.0);
    return phases;
}

/// Scales every machine Pm and load demand by `ratio`.
inline GridCase scale_operating_point(const GridCase& grid, double ratio) {
    require(ratio > 0.0, "load ratio must be positive");
    GridCase scaled = grid;
    for (auto& m : scaled.machines) m.pm *= ratio;
    for (auto& l : scaled.loads) l.power *= ratio;
    return scaled;
}

/// Copy of the grid with one branch taken out of service.
inline GridCase with_branch_out(const GridCase& grid, std::size_t branch) {
    require(branch < grid.branches.size(), "branch " + std::to_string(branch) + " does not exist");
    GridCase out = grid;
    out.branches[branch].status = BranchStatus::out_of_service;
    return out;
}

}  // namespace tsas

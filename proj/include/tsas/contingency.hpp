#pragma once

// Contingency enumeration: topology x load level x fault location, with a
// seeded clearing time per scenario.

#include <optional>
#include <random>

#include "tsas/grid.hpp"

namespace tsas {

struct ContingencySpec {
    std::optional<std::size_t> out_branch;  // N-1 topology; nullopt = nominal
    double load_ratio = 1.0;
    Fault fault;
    double clearing_time = 0.1;
    std::uint64_t seed = 0;

    /// Stable identifier, unique within one enumeration.
    std::string case_id() const {
        char buf[96];
        const std::string topo = out_branch ? "out" + std::to_string(*out_branch) : "nom";
        if (fault.kind == Fault::Kind::bus)
            std::snprintf(buf, sizeof buf, "%s_l%03d_bus%d", topo.c_str(),
                          static_cast<int>(std::lround(load_ratio * 100)), fault.bus_id);
        else
            std::snprintf(buf, sizeof buf, "%s_l%03d_br%zu_%02d", topo.c_str(),
                          static_cast<int>(std::lround(load_ratio * 100)), fault.branch,
                          static_cast<int>(std::lround(fault.position * 100)));
        return buf;
    }
};

struct ProtocolRules {
    bool nominal_topology = true;
    bool n_minus_1 = true;
    std::vector<double> load_levels{0.8, 1.0, 1.2};
    bool bus_faults = true;
    bool line_faults = true;
    std::vector<double> fault_positions{0.2, 0.4, 0.6, 0.8};
    ClearingWindow clearing{};
    std::optional<std::size_t> target_count;  // uniform random subsample when exceeded
};

/// Cartesian product of topologies x load levels x (bus faults, line-fault
/// positions). N-1 topologies that disconnect the network are skipped with a
/// warning; the outaged branch is never faulted. Deterministic given seed.
inline std::vector<ContingencySpec> enumerate_contingencies(const GridCase& grid,
                                                            const ProtocolRules& rules,
                                                            std::uint64_t seed) {
    validate(grid);
    require(rules.clearing.min > 0.0 && rules.clearing.min <= rules.clearing.max,
            "invalid clearing-time range");
    for (double p : rules.fault_positions)
        require(is_valid_fault_position(p), "line fault positions must be among 0.2, 0.4, 0.6, 0.8");
    for (double r : rules.load_levels) require(r > 0.0, "load levels must be positive");

    std::vector<std::optional<std::size_t>> topologies;
    if (rules.nominal_topology) topologies.emplace_back(std::nullopt);
    if (rules.n_minus_1) {
        for (std::size_t b = 0; b < grid.branches.size(); ++b) {
            if (!grid.branches[b].in_service()) continue;
            if (!is_connected(with_branch_out(grid, b))) {
                log_warning("skipping N-1 outage of branch " + std::to_string(b) +
                            " (disconnects the network)");
                continue;
            }
            topologies.emplace_back(b);
        }
    }

    std::vector<ContingencySpec> specs;
    for (const auto& topo : topologies) {
        for (double ratio : rules.load_levels) {
            if (rules.bus_faults)
                for (const auto& bus : grid.buses)
                    specs.push_back({topo, ratio, Fault::at_bus(bus.id), 0.0, 0});
            if (rules.line_faults)
                for (std::size_t b = 0; b < grid.branches.size(); ++b) {
                    if (!grid.branches[b].in_service() || (topo && *topo == b)) continue;
                    for (double p : rules.fault_positions)
                        specs.push_back({topo, ratio, Fault::on_line(b, p), 0.0, 0});
                }
        }
    }
    require(!specs.empty(), "contingency enumeration is empty");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> clearing(rules.clearing.min, rules.clearing.max);
    for (std::size_t k = 0; k < specs.size(); ++k) {
        specs[k].clearing_time = clearing(rng);
        specs[k].seed = mix_seed(seed + k);
    }

    if (rules.target_count && *rules.target_count < specs.size()) {
        require(*rules.target_count > 0, "target case count must be positive");
        std::vector<std::size_t> order(specs.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(*rules.target_count);
        std::sort(order.begin(), order.end());
        std::vector<ContingencySpec> kept;
        kept.reserve(order.size());
        for (auto k : order) kept.push_back(specs[k]);
        specs = std::move(kept);
    }
    return specs;
}

/// Operating point for a spec: N-1 outage applied, then load scaling.
inline GridCase spec_grid(const GridCase& grid, const ContingencySpec& spec) {
    GridCase g = spec.out_branch ? with_branch_out(grid, *spec.out_branch) : grid;
    return scale_operating_point(g, spec.load_ratio);
}

}  // namespace tsas

#pragma once

// Built-in test systems and the JSON grid description format.

#include <fstream>

#include <nlohmann/json.hpp>

#include "tsas/grid.hpp"

namespace tsas {

/// Single machine against an infinite bus (a machine of huge inertia).
/// Maximum transfer E'V/X is 1.0 per-unit; default dispatch 0.5 per-unit.
inline GridCase smib_grid(double pm = 0.5) {
    GridCase g;
    g.name = "smib";
    g.base_frequency = 60.0;
    g.buses = {{1, {}}, {2, {}}};
    g.branches = {{1, 2, {0.0, 0.69}, 0.0, BranchStatus::in_service}};
    g.machines = {
        {1, 5.0, 0.0, 0.30, pm, 1.0},
        {2, 1.0e6, 0.0, 0.01, 0.0, 1.0},
    };
    return g;
}

/// WSCC 3-machine, 9-bus system (Anderson & Fouad data, 100 MVA base).
/// EMFs and dispatch correspond to the published base-case power flow.
inline GridCase wscc9_grid() {
    GridCase g;
    g.name = "wscc9";
    g.base_frequency = 60.0;
    for (int id = 1; id <= 9; ++id) g.buses.push_back({id, {}});
    auto line = [](int f, int t, double r, double x, double b) {
        return Branch{f, t, {r, x}, b, BranchStatus::in_service};
    };
    g.branches = {
        line(1, 4, 0.0, 0.0576, 0.0),      line(2, 7, 0.0, 0.0625, 0.0),
        line(3, 9, 0.0, 0.0586, 0.0),      line(4, 5, 0.010, 0.085, 0.176),
        line(4, 6, 0.017, 0.092, 0.158),   line(5, 7, 0.032, 0.161, 0.306),
        line(6, 9, 0.039, 0.170, 0.358),   line(7, 8, 0.0085, 0.072, 0.149),
        line(8, 9, 0.0119, 0.1008, 0.209),
    };
    g.machines = {
        {1, 23.64, 0.25, 0.0608, 0.716, 1.0566},
        {2, 6.40, 0.068, 0.1198, 1.630, 1.0502},
        {3, 3.01, 0.032, 0.1813, 0.850, 1.0170},
    };
    g.loads = {{5, {1.25, 0.50}}, {6, {0.90, 0.30}}, {8, {1.00, 0.35}}};
    return g;
}

inline nlohmann::json grid_to_json(const GridCase& grid) {
    nlohmann::json j;
    j["name"] = grid.name;
    j["base_frequency"] = grid.base_frequency;
    j["buses"] = nlohmann::json::array();
    for (const auto& b : grid.buses)
        j["buses"].push_back({{"id", b.id}, {"g", b.shunt.real()}, {"b", b.shunt.imag()}});
    j["branches"] = nlohmann::json::array();
    for (const auto& br : grid.branches)
        j["branches"].push_back({{"from", br.from},
                                 {"to", br.to},
                                 {"r", br.impedance.real()},
                                 {"x", br.impedance.imag()},
                                 {"charging", br.charging},
                                 {"status", br.in_service() ? "in" : "out"}});
    j["machines"] = nlohmann::json::array();
    for (const auto& m : grid.machines)
        j["machines"].push_back({{"bus", m.bus},
                                 {"H", m.inertia},
                                 {"D", m.damping},
                                 {"xdp", m.xd_prime},
                                 {"pm", m.pm},
                                 {"emf", m.emf}});
    j["loads"] = nlohmann::json::array();
    for (const auto& l : grid.loads)
        j["loads"].push_back({{"bus", l.bus}, {"p", l.power.real()}, {"q", l.power.imag()}});
    return j;
}

inline GridCase grid_from_json(const nlohmann::json& j) {
    GridCase g;
    try {
        g.name = j.value("name", std::string("custom"));
        g.base_frequency = j.value("base_frequency", 60.0);
        for (const auto& b : j.at("buses"))
            g.buses.push_back({b.at("id").get<int>(), {b.value("g", 0.0), b.value("b", 0.0)}});
        for (const auto& br : j.at("branches")) {
            const std::string status = br.value("status", std::string("in"));
            require(status == "in" || status == "out", "branch status must be \"in\" or \"out\"");
            g.branches.push_back({br.at("from").get<int>(), br.at("to").get<int>(),
                                  {br.value("r", 0.0), br.at("x").get<double>()},
                                  br.value("charging", 0.0),
                                  status == "in" ? BranchStatus::in_service
                                                 : BranchStatus::out_of_service});
        }
        for (const auto& m : j.at("machines"))
            g.machines.push_back({m.at("bus").get<int>(), m.at("H").get<double>(),
                                  m.value("D", 0.0), m.at("xdp").get<double>(),
                                  m.at("pm").get<double>(), m.value("emf", 1.0)});
        if (j.contains("loads"))
            for (const auto& l : j.at("loads"))
                g.loads.push_back({l.at("bus").get<int>(), {l.at("p").get<double>(),
                                                            l.value("q", 0.0)}});
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed grid description: ") + e.what());
    }
    validate(g);
    return g;
}

/// Resolves a built-in grid name ("smib", "wscc9") or a path to a JSON grid file.
inline GridCase load_grid(const std::string& name_or_path) {
    if (name_or_path == "smib") return smib_grid();
    if (name_or_path == "wscc9") return wscc9_grid();
    if (name_or_path == "ne39")
        throw Error("grid 'ne39' is not bundled; supply it as a JSON grid file");
    std::ifstream in(name_or_path);
    if (!in) throw Error("unknown grid '" + name_or_path + "' (not built-in, file not found)");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("cannot parse grid file " + name_or_path + ": " + e.what());
    }
    return grid_from_json(j);
}

}  // namespace tsas

#pragma once

#include <map>

#include "tsas/dataset.hpp"

namespace tsas {

struct GenerationOptions {
    SimulationConfig simulation{};
    std::size_t frames = 20;  // cycles kept per case (at least the assessment horizon)
    AngleMode angle_mode = AngleMode::relative;
    ClearingWindow clearing{};
    std::size_t workers = worker_count();
};

/// Simulates one contingency. Loads are constant admittances fixed at the
/// intact network's operating voltage for the spec's load level; the N-1
/// outage is then applied to that constant-admittance network.
inline LabeledSequence generate_case(const GridCase& grid, const ContingencySpec& spec,
                                     const GenerationOptions& options,
                                     const Eigen::VectorXcd& load_admittance) {
    const GridCase case_grid = spec_grid(grid, spec);
    const auto phases = apply_contingency_phases(case_grid, spec.fault, spec.clearing_time, options.clearing);
    SimulationConfig sim = options.simulation;
    sim.cycles_needed = static_cast<int>(options.frames);
    const auto record = simulate_case(case_grid, phases, sim, load_admittance);
    LabeledSequence seq;
    seq.case_id = spec.case_id();
    seq.features = build_feature_sequence(record, options.frames, options.angle_mode);
    seq.label = label_from_trajectory(record);
    seq.delta_max = record.delta_max;
    seq.spec = spec;
    return seq;
}

/// Simulates every spec (in parallel) and assembles the dataset in spec
/// order. Specs whose simulation fails are skipped with a warning.
inline Dataset generate_cases(const GridCase& grid, const std::vector<ContingencySpec>& specs,
                              const GenerationOptions& options, std::uint64_t seed = 0) {
    require(options.frames >= 1, "at least one frame per case is required");
    std::map<double, Eigen::VectorXcd> loads_by_ratio;
    for (const auto& spec : specs)
        if (!loads_by_ratio.count(spec.load_ratio))
            loads_by_ratio[spec.load_ratio] =
                operating_load_admittance(scale_operating_point(grid, spec.load_ratio));

    auto results = parallel_map<std::optional<LabeledSequence>>(
        specs.size(),
        [&](std::size_t k) -> std::optional<LabeledSequence> {
            try {
                return generate_case(grid, specs[k], options, loads_by_ratio.at(specs[k].load_ratio));
            } catch (const Error& e) {
                log_warning("skipping " + specs[k].case_id() + ": " + e.what());
                return std::nullopt;
            }
        },
        options.workers);

    Dataset data;
    data.bus_count = grid.bus_count();
    data.frames = options.frames;
    data.cycle_rate =
        options.simulation.cycle_rate > 0.0 ? options.simulation.cycle_rate : grid.base_frequency;
    data.grid_name = grid.name;
    data.seed = seed;
    data.angle_mode = options.angle_mode;
    for (auto& r : results)
        if (r) data.cases.push_back(std::move(*r));
    require(!data.empty(), "no contingency could be simulated");
    return data;
}

}  // namespace tsas

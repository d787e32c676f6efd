// tsas: command-line driver for dataset generation, training, evaluation
// and the sensitivity / placement / noise experiments.

#include <CLI11.hpp>

#include "tsas/experiment.hpp"

namespace {

using namespace tsas;

struct Options {
    std::string config_path;
    std::optional<std::string> grid;
    std::optional<std::uint64_t> seed;
    std::optional<double> delta;
    std::optional<std::size_t> window;
    std::optional<std::size_t> t_max;
    std::optional<std::string> out;
    std::optional<double> tve;
    std::string direction = "forward";
    // simulate only
    int fault_bus = 0;
    double clearing = 0.1;
    double load = 1.0;
};

ExperimentConfig resolve(const Options& o) {
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
    if (o.grid) c.grid = *o.grid;
    if (o.seed) c.seed = *o.seed;
    if (o.delta) c.delta = *o.delta;
    if (o.window) c.window = *o.window;
    if (o.t_max) c.t_max = *o.t_max;
    if (o.out) c.out = *o.out;
    if (o.tve) c.tve = *o.tve;
    c.validate();
    return c;
}

void print_report(const std::string& label, const MetricsReport& r) {
    std::printf("%s: accuracy %.4f  ART %.3f cycles  fallback %zu/%zu\n", label.c_str(), r.accuracy, r.art,
                r.fallback_count, r.cases);
}

void cmd_generate(const ExperimentConfig& c) {
    const auto data = generate_datasets(c);
    save_dataset(detail::out_path(c, "train.jsonl"), data.train);
    save_dataset(detail::out_path(c, "test.jsonl"), data.test);
    std::size_t stable = 0;
    for (const auto* d : {&data.train, &data.test})
        for (const auto& k : d->cases) stable += k.label.y;
    const std::size_t total = data.train.size() + data.test.size();
    std::printf("generated %zu cases (%zu stable, %zu unstable): %zu train, %zu test -> %s\n", total, stable,
                total - stable, data.train.size(), data.test.size(), c.out.c_str());
}

void cmd_train(const ExperimentConfig& c) {
    const auto train = load_dataset(detail::out_path(c, "train.jsonl"));
    const auto result = train_on(c, train, detail::seeded_train_config(c));
    save_model(detail::out_path(c, "model.json"), result.params, model_metadata(c, train));
    auto hist = detail::open_output(detail::out_path(c, "training_history.csv"));
    write_history_csv(hist, result, config_hash(c));
    std::printf("trained %zu epochs (best %zu) in %.1f s -> %s\n", result.history.size(), result.best_epoch,
                result.seconds, detail::out_path(c, "model.json").c_str());
}

ModelParams load_trained(const ExperimentConfig& c, const Dataset& d) {
    auto file = load_model(detail::out_path(c, "model.json"));
    require(file.meta.bus_count == d.bus_count, "model was trained for a different bus count");
    return std::move(file.params);
}

void cmd_evaluate(const ExperimentConfig& c) {
    const auto data = load_datasets(c);
    const auto model = load_trained(c, data.test);
    const auto test = evaluate_dataset(model, data.test, c.delta, c.t_max);
    const auto train = evaluate_dataset(model, data.train, c.delta, c.t_max);
    write_report_file(c, "report_test.csv", test, data.test);
    write_report_file(c, "report_train.csv", train, data.train);
    print_report("test", test);
    print_report("train", train);
}

void cmd_sweep_delta(const ExperimentConfig& c) {
    const auto test = load_dataset(detail::out_path(c, "test.jsonl"));
    const auto sweep = run_delta_sweep(load_trained(c, test), test, c.t_max);
    auto out = detail::open_output(detail::out_path(c, "sweep_delta.csv"));
    write_sweep_csv(out, sweep, config_hash(c));
    std::printf("delta sweep: %zu points, ART %.3f at delta %.2f .. %.3f at delta %.2f\n", sweep.rows.size(),
                sweep.rows.front().art, sweep.rows.front().value, sweep.rows.back().art, sweep.rows.back().value);
}

void cmd_sweep_T(const ExperimentConfig& c) {
    const auto data = load_datasets(c);
    const auto sweep = run_T_sweep(c, data);
    const auto hash = config_hash(c);
    auto out = detail::open_output(detail::out_path(c, "sweep_T.csv"));
    write_sweep_csv(out, sweep, hash, 0);
    const auto timing = time_T_training(c, data, sweep);
    auto tout = detail::open_output(detail::out_path(c, "sweep_T_timing.csv"));
    write_timing_csv(tout, c.t_values, timing, hash);
    for (const auto& r : sweep.rows)
        std::printf("T=%g  accuracy %.4f  ART %.3f  train %.1f s\n", r.value, r.accuracy, r.art,
                    r.train_seconds.value_or(0.0));
}

void cmd_select_pmu(const ExperimentConfig& c, const std::string& direction_text) {
    const auto direction = direction_from_string(direction_text);
    const auto data = load_datasets(c);
    const auto grid = load_grid(c.grid);
    require(grid.bus_count() == data.train.bus_count, "grid does not match the dataset bus count");
    const auto result = run_feature_selection(c, data, direction);
    const std::string stem = direction == SelectionDirection::forward ? "pmu_forward" : "pmu_backward";
    const auto hash = config_hash(c);
    auto out = detail::open_output(detail::out_path(c, stem + ".csv"));
    write_selection_csv(out, result, grid, hash);
    auto cand = detail::open_output(detail::out_path(c, stem + "_candidates.csv"));
    write_candidates_csv(cand, result, grid, hash);
    for (const auto& s : result.steps)
        std::printf("%zu PMU(s) [%s]: accuracy %.4f  ART %.3f\n", s.buses.size(), bus_list(grid, s.buses).c_str(),
                    s.accuracy, s.art);
}

void cmd_noise_study(const ExperimentConfig& c) {
    const auto data = load_datasets(c);
    const auto result = run_noise_study(c, data, c.tve);
    auto out = detail::open_output(detail::out_path(c, "noise_study.csv"));
    write_noise_csv(out, result, c.tve, config_hash(c));
    write_report_file(c, "report_noisy_test.csv", result.noisy, data.test);
    print_report("clean", result.clean);
    print_report("noisy", result.noisy);
    std::printf("largest injected error ratio %.6f\n",
                std::max(result.train_audit.max_ratio, result.test_audit.max_ratio));
}

void cmd_simulate(const ExperimentConfig& c, const Options& o) {
    const auto grid = load_grid(c.grid);
    const auto scaled = scale_operating_point(grid, o.load);
    const int bus = o.fault_bus != 0 ? o.fault_bus : grid.buses.front().id;
    const auto phases = apply_contingency_phases(scaled, Fault::at_bus(bus), o.clearing, ClearingWindow{});
    SimulationConfig sim;
    sim.cycles_needed = static_cast<int>(c.frames);
    const auto record = simulate_case(scaled, phases, sim);
    auto out = detail::open_output(detail::out_path(c, "trajectory.csv"));
    write_trajectory_csv(out, grid, record);
    const auto label = label_from_trajectory(record);
    std::printf("delta_max %.2f deg  eta %.4f  %s\n", record.delta_max, label.eta,
                label.y ? "stable" : "unstable");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-adaptive transient stability assessment toolkit"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
        sub->add_option("--grid", o.grid, "built-in grid name (smib, wscc9) or grid JSON file");
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--delta", o.delta, "stability threshold in (0, 0.5)");
        sub->add_option("--T", o.window, "training observation window in cycles");
        sub->add_option("--tmax", o.t_max, "maximum decision time in cycles");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--tve", o.tve, "PMU total vector error bound for the noise study");
    };

    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
             {"generate", "simulate contingencies and write train/test datasets"},
             {"train", "train the LSTM on the training split"},
             {"evaluate", "time-adaptive evaluation of the trained model"},
             {"sweep-delta", "ART and accuracy over 49 thresholds"},
             {"sweep-T", "retrain and evaluate for each observation window"},
             {"select-pmu", "sequential forward/backward PMU placement"},
             {"noise-study", "clean vs noisy PMU data"},
             {"simulate", "dump one bus-fault trajectory"}}) {
        subs[name] = app.add_subcommand(name, help);
        add_common(subs[name]);
    }
    subs["select-pmu"]->add_option("--direction", o.direction, "forward or backward");
    subs["simulate"]->add_option("--fault-bus", o.fault_bus, "faulted bus id (default: first bus)");
    subs["simulate"]->add_option("--clearing", o.clearing, "fault duration in seconds");
    subs["simulate"]->add_option("--load", o.load, "load level ratio");

    CLI11_PARSE(app, argc, argv);
    try {
        const auto c = resolve(o);
        if (subs["generate"]->parsed()) cmd_generate(c);
        else if (subs["train"]->parsed()) cmd_train(c);
        else if (subs["evaluate"]->parsed()) cmd_evaluate(c);
        else if (subs["sweep-delta"]->parsed()) cmd_sweep_delta(c);
        else if (subs["sweep-T"]->parsed()) cmd_sweep_T(c);
        else if (subs["select-pmu"]->parsed()) cmd_select_pmu(c, o.direction);
        else if (subs["noise-study"]->parsed()) cmd_noise_study(c);
        else if (subs["simulate"]->parsed()) cmd_simulate(c, o);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "tsas: error: %s\n", e.what());
        return 1;
    }
    return 0;
}

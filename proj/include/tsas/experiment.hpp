#pragma once

// Experiment orchestration shared by the command-line tool and the
// acceptance checks: config file, seeded pipeline stages, sweeps, PMU
// placement and the noise study, each writing CSV into an output directory.

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tsas/assess.hpp"
#include "tsas/case_factory.hpp"
#include "tsas/grid_io.hpp"
#include "tsas/model_io.hpp"
#include "tsas/train.hpp"

namespace tsas {

struct ExperimentConfig {
    std::string grid = "wscc9";
    std::uint64_t seed = 42;
    ProtocolRules protocol{};
    std::size_t frames = 20;
    AngleMode angle_mode = AngleMode::relative;
    std::size_t split_train = 3;
    std::size_t split_test = 1;
    std::size_t window = 5;  // T
    double delta = 0.4;
    std::size_t t_max = 20;
    TrainConfig train{};
    double valid_fraction = 0.1;
    std::size_t selection_epoch_cap = 30;
    double tve = 0.01;
    std::size_t timing_repeats = 5;
    std::vector<std::size_t> t_values{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::string out = "out";

    void validate() const {
        require_threshold(delta);
        require(window >= 1 && window <= t_max, "T must satisfy 1 <= T <= tmax");
        require(frames >= t_max, "stored frames must cover tmax");
        require(split_train > 0 && split_test > 0, "split parts must be positive");
        require(tve >= 0.0 && tve < 1.0, "tve must lie in [0, 1)");
        require(selection_epoch_cap >= 1, "selection epoch cap must be positive");
    }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    const auto& p = c.protocol;
    const auto& t = c.train;
    nlohmann::json protocol = {
        {"nominal_topology", p.nominal_topology},
        {"n_minus_1", p.n_minus_1},
        {"load_levels", p.load_levels},
        {"bus_faults", p.bus_faults},
        {"line_faults", p.line_faults},
        {"fault_positions", p.fault_positions},
        {"clearing_time", {p.clearing.min, p.clearing.max}},
        {"target_count", p.target_count ? nlohmann::json(*p.target_count) : nlohmann::json(nullptr)},
    };
    nlohmann::json train = {
        {"max_epochs", t.max_epochs},
        {"batch_size", t.batch_size},
        {"patience", t.patience ? nlohmann::json(*t.patience) : nlohmann::json(nullptr)},
        {"per_timestep", t.per_timestep},
        {"hidden", t.hidden},
        {"dense", t.dense},
        {"learning_rate", t.adam.lr},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"epsilon", t.adam.epsilon},
        {"standardize", t.standardize},
        {"gradient_chunks", t.gradient_chunks},
        {"valid_fraction", c.valid_fraction},
    };
    return {
        {"grid", c.grid},
        {"seed", c.seed},
        {"protocol", protocol},
        {"frames", c.frames},
        {"angle_mode", to_string(c.angle_mode)},
        {"split", {c.split_train, c.split_test}},
        {"T", c.window},
        {"delta", c.delta},
        {"tmax", c.t_max},
        {"train", train},
        {"selection_epoch_cap", c.selection_epoch_cap},
        {"tve", c.tve},
        {"timing_repeats", c.timing_repeats},
        {"T_values", c.t_values},
        {"out", c.out},
    };
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"grid",  "seed",  "protocol", "frames", "angle_mode",
                                             "split", "T",     "delta",    "tmax",   "train",
                                             "selection_epoch_cap", "tve", "timing_repeats",
                                             "T_values", "out"};
    static const std::set<std::string> known_protocol{"nominal_topology", "n_minus_1",      "load_levels",
                                                      "bus_faults",       "line_faults",    "fault_positions",
                                                      "clearing_time",    "target_count"};
    static const std::set<std::string> known_train{"max_epochs", "batch_size",   "patience",        "per_timestep",
                                                   "hidden",     "dense",        "learning_rate",   "beta1",
                                                   "beta2",      "epsilon",      "standardize",     "gradient_chunks",
                                                   "valid_fraction"};
    auto check_keys = [](const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
        require(obj.is_object(), where + " must be an object");
        for (const auto& [key, _] : obj.items())
            require(allowed.count(key) > 0, "unknown config key '" + where + key + "'");
    };
    ExperimentConfig c;
    try {
        check_keys(j, known, "");
        if (j.contains("protocol")) check_keys(j["protocol"], known_protocol, "protocol.");
        if (j.contains("train")) check_keys(j["train"], known_train, "train.");
        c.grid = j.value("grid", c.grid);
        c.seed = j.value("seed", c.seed);
        if (j.contains("protocol")) {
            const auto& p = j["protocol"];
            auto& r = c.protocol;
            r.nominal_topology = p.value("nominal_topology", r.nominal_topology);
            r.n_minus_1 = p.value("n_minus_1", r.n_minus_1);
            r.load_levels = p.value("load_levels", r.load_levels);
            r.bus_faults = p.value("bus_faults", r.bus_faults);
            r.line_faults = p.value("line_faults", r.line_faults);
            r.fault_positions = p.value("fault_positions", r.fault_positions);
            if (p.contains("clearing_time")) {
                const auto range = p["clearing_time"].get<std::vector<double>>();
                require(range.size() == 2, "clearing_time must be [min, max]");
                r.clearing = {range[0], range[1]};
            }
            if (p.contains("target_count") && !p["target_count"].is_null())
                r.target_count = p["target_count"].get<std::size_t>();
        }
        c.frames = j.value("frames", c.frames);
        if (j.contains("angle_mode")) c.angle_mode = angle_mode_from_string(j["angle_mode"].get<std::string>());
        if (j.contains("split")) {
            const auto parts = j["split"].get<std::vector<std::size_t>>();
            require(parts.size() == 2, "split must be [train, test]");
            c.split_train = parts[0];
            c.split_test = parts[1];
        }
        c.window = j.value("T", c.window);
        c.delta = j.value("delta", c.delta);
        c.t_max = j.value("tmax", c.t_max);
        if (j.contains("train")) {
            const auto& t = j["train"];
            auto& tc = c.train;
            tc.max_epochs = t.value("max_epochs", tc.max_epochs);
            tc.batch_size = t.value("batch_size", tc.batch_size);
            if (t.contains("patience"))
                tc.patience = t["patience"].is_null() ? std::nullopt
                                                      : std::optional<std::size_t>(t["patience"].get<std::size_t>());
            tc.per_timestep = t.value("per_timestep", tc.per_timestep);
            tc.hidden = t.value("hidden", tc.hidden);
            tc.dense = t.value("dense", tc.dense);
            tc.adam.lr = t.value("learning_rate", tc.adam.lr);
            tc.adam.beta1 = t.value("beta1", tc.adam.beta1);
            tc.adam.beta2 = t.value("beta2", tc.adam.beta2);
            tc.adam.epsilon = t.value("epsilon", tc.adam.epsilon);
            tc.standardize = t.value("standardize", tc.standardize);
            tc.gradient_chunks = t.value("gradient_chunks", tc.gradient_chunks);
            c.valid_fraction = t.value("valid_fraction", c.valid_fraction);
        }
        c.selection_epoch_cap = j.value("selection_epoch_cap", c.selection_epoch_cap);
        c.tve = j.value("tve", c.tve);
        c.timing_repeats = j.value("timing_repeats", c.timing_repeats);
        c.t_values = j.value("T_values", c.t_values);
        c.out = j.value("out", c.out);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot read config " + path);
    try {
        return config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("config " + path + " is not valid JSON: " + e.what());
    }
}

/// FNV-1a of the canonical config JSON without the output directory, so the
/// same experiment written to two places carries the same hash.
inline std::string config_hash(const ExperimentConfig& c) {
    auto j = config_to_json(c);
    j.erase("out");
    return hash_hex(fnv1a(j.dump()));
}

// --- pipeline stages --------------------------------------------------------

namespace detail {

inline std::string out_path(const ExperimentConfig& c, const std::string& name) {
    std::filesystem::create_directories(c.out);
    return (std::filesystem::path(c.out) / name).string();
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write " + path);
    return out;
}

inline TrainConfig seeded_train_config(const ExperimentConfig& c, std::string_view purpose = "train") {
    TrainConfig t = c.train;
    t.seed = derive_seed(c.seed, purpose);
    return t;
}

}  // namespace detail

inline std::string dataset_id(const Dataset& d) {
    return d.grid_name + "-s" + std::to_string(d.seed) + "-" + d.split_tag;
}

struct DatasetPair {
    Dataset train;
    Dataset test;
};

/// Enumerates, simulates and splits the cases.
inline DatasetPair generate_datasets(const ExperimentConfig& c) {
    c.validate();
    const GridCase grid = load_grid(c.grid);
    const auto specs = enumerate_contingencies(grid, c.protocol, derive_seed(c.seed, "enumerate"));
    GenerationOptions options;
    options.frames = c.frames;
    options.angle_mode = c.angle_mode;
    options.clearing = c.protocol.clearing;
    Dataset all = generate_cases(grid, specs, options, c.seed);
    auto [train, test] = split_dataset(all, c.split_train, c.split_test, derive_seed(c.seed, "split"));
    return {std::move(train), std::move(test)};
}

inline DatasetPair load_datasets(const ExperimentConfig& c) {
    return {load_dataset(detail::out_path(c, "train.jsonl")), load_dataset(detail::out_path(c, "test.jsonl"))};
}

inline ModelMetadata model_metadata(const ExperimentConfig& c, const Dataset& train) {
    return {train.bus_count, c.window, c.train.per_timestep, to_string(train.angle_mode), config_hash(c)};
}

/// Trains on the first T cycles of each training case with a 10% holdout.
inline TrainResult train_on(const ExperimentConfig& c, const Dataset& train, const TrainConfig& tc) {
    return train_with_holdout(truncate_frames(train, c.window), tc, c.valid_fraction);
}

inline void write_history_csv(std::ostream& out, const TrainResult& r, const std::string& hash) {
    write_csv_header_comment(out, "training-history", hash);
    out << "epoch,train_loss,valid_loss\n";
    for (const auto& e : r.history)
        out << e.epoch << ',' << format_double(e.train_loss, 9) << ',' << format_double(e.valid_loss, 9) << '\n';
    out << "# best_epoch=" << r.best_epoch << '\n';
}

inline ReportContext report_context(const ExperimentConfig& c, const Dataset& d) {
    return {c.delta, c.window, c.t_max, dataset_id(d), config_hash(c)};
}

inline void write_report_file(const ExperimentConfig& c, const std::string& name, const MetricsReport& r,
                              const Dataset& d) {
    auto out = detail::open_output(detail::out_path(c, name));
    write_report_csv(out, r, report_context(c, d));
}

// --- sweeps -----------------------------------------------------------------

struct SweepRow {
    double value = 0.0;
    double art = 0.0;
    double accuracy = 0.0;
    double fallback_rate = 0.0;
    std::optional<double> train_seconds;
};

struct SweepResult {
    std::string parameter;
    std::vector<SweepRow> rows;
};

/// The 49 thresholds 0.01, 0.02, ..., 0.49.
inline std::vector<double> default_delta_grid() {
    std::vector<double> out;
    for (int k = 1; k <= 49; ++k) out.push_back(k / 100.0);
    return out;
}

/// One model, many thresholds: score traces are computed once.
inline SweepResult run_delta_sweep(const ModelParams& model, const Dataset& test, std::size_t t_max,
                                   const std::vector<double>& deltas = default_delta_grid(),
                                   std::vector<MetricsReport>* reports = nullptr) {
    require(!test.empty(), "delta sweep needs a test set");
    const auto traces = score_traces(model, test, t_max);
    SweepResult result{"delta", {}};
    for (double d : deltas) {
        auto r = evaluate_traces(traces, test, d, t_max);
        result.rows.push_back({d, r.art, r.accuracy, r.fallback_rate(), std::nullopt});
        if (reports) reports->push_back(std::move(r));
    }
    return result;
}

/// One fresh model per T, each trained on the first T cycles and evaluated
/// on full-length test streams.
inline SweepResult run_T_sweep(const ExperimentConfig& c, const DatasetPair& data) {
    for (auto t : c.t_values)
        require(t >= 1 && t <= data.train.frames,
                "T = " + std::to_string(t) + " exceeds the " + std::to_string(data.train.frames) +
                    " stored frames");
    auto rows = parallel_map<SweepRow>(
        c.t_values.size(),
        [&](std::size_t k) {
            ExperimentConfig ck = c;
            ck.window = c.t_values[k];
            const auto trained = train_on(ck, data.train, detail::seeded_train_config(c));
            const auto r = evaluate_dataset(trained.params, data.test, c.delta, c.t_max, 1);
            return SweepRow{static_cast<double>(ck.window), r.art, r.accuracy, r.fallback_rate(), trained.seconds};
        },
        worker_count());
    return {"T", std::move(rows)};
}

/// Deterministic columns only; training time goes to a separate file.
inline void write_sweep_csv(std::ostream& out, const SweepResult& s, const std::string& hash, int precision = 2) {
    write_csv_header_comment(out, "sweep-" + s.parameter, hash);
    out << s.parameter << ",art,accuracy,fallback_rate\n";
    for (const auto& r : s.rows)
        out << format_double(r.value, precision) << ',' << format_double(r.art) << ','
            << format_double(r.accuracy) << ',' << format_double(r.fallback_rate) << '\n';
}

struct TimingSummary {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t runs = 0;
};

inline TimingSummary summarize_times(const std::vector<double>& seconds) {
    TimingSummary s;
    s.runs = seconds.size();
    if (seconds.empty()) return s;
    for (double v : seconds) s.mean += v;
    s.mean /= static_cast<double>(seconds.size());
    for (double v : seconds) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = seconds.size() > 1 ? std::sqrt(s.stddev / static_cast<double>(seconds.size() - 1)) : 0.0;
    return s;
}

/// Training wall time per T over `timing_repeats` seeded runs (the first
/// run reuses the sweep's own timing).
inline std::vector<TimingSummary> time_T_training(const ExperimentConfig& c, const DatasetPair& data,
                                                  const SweepResult& sweep) {
    std::vector<TimingSummary> out;
    for (std::size_t k = 0; k < c.t_values.size(); ++k) {
        std::vector<double> seconds{sweep.rows[k].train_seconds.value_or(0.0)};
        ExperimentConfig ck = c;
        ck.window = c.t_values[k];
        for (std::size_t rep = 1; rep < c.timing_repeats; ++rep)
            seconds.push_back(
                train_on(ck, data.train, detail::seeded_train_config(c, "timing" + std::to_string(rep))).seconds);
        out.push_back(summarize_times(seconds));
    }
    return out;
}

inline void write_timing_csv(std::ostream& out, const std::vector<std::size_t>& t_values,
                             const std::vector<TimingSummary>& timing, const std::string& hash) {
    write_csv_header_comment(out, "training-time", hash);
    out << "T,mean_seconds,std_seconds,runs\n";
    for (std::size_t k = 0; k < timing.size(); ++k)
        out << t_values[k] << ',' << format_double(timing[k].mean, 3) << ',' << format_double(timing[k].stddev, 3)
            << ',' << timing[k].runs << '\n';
}

// --- PMU placement ----------------------------------------------------------

enum class SelectionDirection { forward, backward };

inline SelectionDirection direction_from_string(const std::string& s) {
    if (s == "forward" || s == "sfs") return SelectionDirection::forward;
    if (s == "backward" || s == "sbs") return SelectionDirection::backward;
    throw Error("direction must be forward or backward, got '" + s + "'");
}

struct CandidateScore {
    std::size_t round = 0;
    std::size_t bus = 0;  // index into the bus list
    double accuracy = 0.0;
    double art = 0.0;
};

struct SelectionStep {
    std::vector<std::size_t> buses;  // sorted bus indices
    double accuracy = 0.0;           // full-budget model on the test set
    double art = 0.0;
    double fallback_rate = 0.0;
};

struct SelectionResult {
    SelectionDirection direction = SelectionDirection::forward;
    std::vector<SelectionStep> steps;  // in selection order
    std::vector<CandidateScore> candidates;
};

namespace detail {

inline bool better_candidate(const CandidateScore& a, const CandidateScore& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    if (a.art != b.art) return a.art < b.art;
    return a.bus < b.bus;
}

}  // namespace detail

/// Greedy wrapper selection over per-bus feature groups. Candidates train
/// with the reduced epoch cap and are scored on a validation holdout of the
/// training split; every retained set is then retrained at full budget and
/// evaluated on the test split.
inline SelectionResult run_feature_selection(const ExperimentConfig& c, const DatasetPair& data,
                                             SelectionDirection direction) {
    const std::size_t nb = data.train.bus_count;
    auto [fit, valid] =
        validation_split(data.train, c.valid_fraction, derive_seed(c.seed, "selection-validation"));
    TrainConfig candidate_cfg = detail::seeded_train_config(c, "selection");
    candidate_cfg.max_epochs = std::min(candidate_cfg.max_epochs, c.selection_epoch_cap);

    auto score_set = [&](const std::vector<std::size_t>& buses) {
        const auto fit_s = select_buses(fit, buses);
        const auto trained = train_on(c, fit_s, candidate_cfg);
        return evaluate_dataset(trained.params, select_buses(valid, buses), c.delta, c.t_max, 1);
    };

    SelectionResult result;
    result.direction = direction;
    std::vector<std::size_t> current;
    if (direction == SelectionDirection::backward)
        for (std::size_t b = 0; b < nb; ++b) current.push_back(b);
    std::vector<std::vector<std::size_t>> sets;
    if (direction == SelectionDirection::backward) sets.push_back(current);

    for (std::size_t round = 1; round < nb + (direction == SelectionDirection::forward ? 1 : 0); ++round) {
        std::vector<std::size_t> pool;
        for (std::size_t b = 0; b < nb; ++b) {
            const bool in = std::find(current.begin(), current.end(), b) != current.end();
            if (in == (direction == SelectionDirection::backward)) pool.push_back(b);
        }
        auto scores = parallel_map<CandidateScore>(
            pool.size(),
            [&](std::size_t k) {
                std::vector<std::size_t> trial = current;
                if (direction == SelectionDirection::forward)
                    trial.push_back(pool[k]);
                else
                    trial.erase(std::find(trial.begin(), trial.end(), pool[k]));
                std::sort(trial.begin(), trial.end());
                const auto r = score_set(trial);
                return CandidateScore{round, pool[k], r.accuracy, r.art};
            },
            worker_count());
        const auto best = *std::min_element(scores.begin(), scores.end(), detail::better_candidate);
        result.candidates.insert(result.candidates.end(), scores.begin(), scores.end());
        if (direction == SelectionDirection::forward)
            current.push_back(best.bus);
        else
            current.erase(std::find(current.begin(), current.end(), best.bus));
        std::sort(current.begin(), current.end());
        sets.push_back(current);
    }

    const TrainConfig final_cfg = detail::seeded_train_config(c);
    result.steps = parallel_map<SelectionStep>(
        sets.size(),
        [&](std::size_t k) {
            const auto trained = train_on(c, select_buses(data.train, sets[k]), final_cfg);
            const auto r = evaluate_dataset(trained.params, select_buses(data.test, sets[k]), c.delta, c.t_max, 1);
            return SelectionStep{sets[k], r.accuracy, r.art, r.fallback_rate()};
        },
        worker_count());
    return result;
}

inline std::string bus_list(const GridCase& grid, const std::vector<std::size_t>& buses) {
    std::string s;
    for (auto b : buses) {
        if (!s.empty()) s += ' ';
        s += std::to_string(grid.buses.at(b).id);
    }
    return s;
}

inline void write_selection_csv(std::ostream& out, const SelectionResult& r, const GridCase& grid,
                                const std::string& hash) {
    write_csv_header_comment(out, r.direction == SelectionDirection::forward ? "pmu-forward" : "pmu-backward", hash);
    out << "pmu_count,buses,accuracy,art,fallback_rate\n";
    for (const auto& s : r.steps)
        out << s.buses.size() << ',' << bus_list(grid, s.buses) << ',' << format_double(s.accuracy) << ','
            << format_double(s.art) << ',' << format_double(s.fallback_rate) << '\n';
}

inline void write_candidates_csv(std::ostream& out, const SelectionResult& r, const GridCase& grid,
                                 const std::string& hash) {
    write_csv_header_comment(out, "pmu-candidates", hash);
    out << "round,bus,valid_accuracy,valid_art\n";
    for (const auto& s : r.candidates)
        out << s.round << ',' << grid.buses.at(s.bus).id << ',' << format_double(s.accuracy) << ','
            << format_double(s.art) << '\n';
}

// --- noise study ------------------------------------------------------------

struct NoiseStudyResult {
    MetricsReport clean;
    MetricsReport noisy;
    std::string clean_dataset;
    std::string noisy_dataset;
    std::string clean_tag;
    std::string noisy_tag;
    NoiseAudit train_audit;
    NoiseAudit test_audit;
};

/// Trains and evaluates once on clean data and once with the same seeds on
/// data carrying random phasor errors of at most `tve` in both splits.
inline NoiseStudyResult run_noise_study(const ExperimentConfig& c, const DatasetPair& data, double tve) {
    NoiseStudyResult out;
    const auto cfg = detail::seeded_train_config(c);
    auto run = [&](const Dataset& train, const Dataset& test) {
        const auto trained = train_on(c, train, cfg);
        return evaluate_dataset(trained.params, test, c.delta, c.t_max);
    };
    const Dataset noisy_train = inject_pmu_noise(data.train, tve, derive_seed(c.seed, "noise-train"), &out.train_audit);
    const Dataset noisy_test = inject_pmu_noise(data.test, tve, derive_seed(c.seed, "noise-test"), &out.test_audit);
    out.clean = run(data.train, data.test);
    out.noisy = run(noisy_train, noisy_test);
    out.clean_dataset = dataset_id(data.test);
    out.noisy_dataset = dataset_id(noisy_test);
    out.clean_tag = data.test.noise_tag;
    out.noisy_tag = noisy_test.noise_tag;
    return out;
}

inline void write_noise_csv(std::ostream& out, const NoiseStudyResult& r, double tve, const std::string& hash) {
    write_csv_header_comment(out, "noise-study", hash);
    out << "variant,dataset,noise,tve,art,accuracy,fallback_rate,max_error_ratio\n";
    out << "clean," << r.clean_dataset << ',' << r.clean_tag << ",0," << format_double(r.clean.art) << ','
        << format_double(r.clean.accuracy) << ',' << format_double(r.clean.fallback_rate()) << ",0\n";
    out << "noisy," << r.noisy_dataset << ',' << r.noisy_tag << ',' << format_double(tve, 4) << ','
        << format_double(r.noisy.art) << ',' << format_double(r.noisy.accuracy) << ','
        << format_double(r.noisy.fallback_rate()) << ','
        << format_double(std::max(r.train_audit.max_ratio, r.test_audit.max_ratio), 8) << '\n';
}

}  // namespace tsas

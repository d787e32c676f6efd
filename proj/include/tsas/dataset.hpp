#pragma once

// Labeled phasor-sequence datasets: feature construction, train/test split,
// PMU noise injection, bus subsetting and the JSON-lines file format.

#include <fstream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "tsas/contingency.hpp"
#include "tsas/transient.hpp"

namespace tsas {

/// How bus angles enter the features: relative to the frame's circular-mean
/// bus angle (reference invariant), or as the raw simulated angles.
enum class AngleMode { relative, raw };

inline std::string to_string(AngleMode mode) { return mode == AngleMode::relative ? "relative" : "raw"; }

inline AngleMode angle_mode_from_string(const std::string& text) {
    if (text == "relative") return AngleMode::relative;
    if (text == "raw") return AngleMode::raw;
    throw Error("unknown angle mode '" + text + "'");
}

struct LabeledSequence {
    std::string case_id;
    FeatureMatrix features;  // row t: [V_1..V_B, theta_1..theta_B] at cycle t+1
    StabilityLabel label;
    double delta_max = 0.0;
    ContingencySpec spec;

    std::size_t frames() const { return static_cast<std::size_t>(features.rows()); }
};

struct Dataset {
    std::vector<LabeledSequence> cases;
    std::size_t bus_count = 0;
    std::size_t frames = 0;  // stored cycles per case
    double cycle_rate = 60.0;
    std::string split_tag = "all";
    std::string grid_name;
    std::uint64_t seed = 0;
    AngleMode angle_mode = AngleMode::relative;
    std::string noise_tag = "clean";

    std::size_t feature_width() const { return 2 * bus_count; }
    std::size_t size() const { return cases.size(); }
    bool empty() const { return cases.empty(); }

    /// Copy of the metadata with no cases.
    Dataset like() const {
        Dataset d = *this;
        d.cases.clear();
        return d;
    }
};

/// Checks shared width and frame count, and unique case ids.
inline void validate(const Dataset& data) {
    std::set<std::string> ids;
    for (const auto& c : data.cases) {
        require(c.features.cols() == static_cast<Eigen::Index>(data.feature_width()),
                "case " + c.case_id + " has feature width " + std::to_string(c.features.cols()) +
                    ", expected " + std::to_string(data.feature_width()));
        require(c.frames() == data.frames, "case " + c.case_id + " has the wrong frame count");
        require(c.label.y == 0 || c.label.y == 1, "labels must be 0 or 1");
        require(ids.insert(c.case_id).second, "duplicate case id " + c.case_id);
    }
}

namespace detail {

// Circular mean of the phasor angles of buses with nonzero magnitude.
inline double mean_angle(const std::vector<Complex>& phasors) {
    Complex sum{0.0, 0.0};
    for (const auto& v : phasors)
        if (std::abs(v) > 0.0) sum += v / std::abs(v);
    return std::abs(sum) > 0.0 ? std::arg(sum) : 0.0;
}

inline void fill_row(FeatureMatrix& out, Eigen::Index row, const std::vector<Complex>& phasors,
                     AngleMode mode) {
    const auto nb = static_cast<Eigen::Index>(phasors.size());
    const double reference = mode == AngleMode::relative ? mean_angle(phasors) : 0.0;
    for (Eigen::Index b = 0; b < nb; ++b) {
        const double mag = std::abs(phasors[b]);
        out(row, b) = mag;
        out(row, nb + b) = mag > 0.0 ? wrap_angle(std::arg(phasors[b]) - reference) : 0.0;
    }
}

inline std::vector<Complex> row_phasors(const FeatureMatrix& features, Eigen::Index row) {
    const auto nb = features.cols() / 2;
    std::vector<Complex> phasors(static_cast<std::size_t>(nb));
    for (Eigen::Index b = 0; b < nb; ++b)
        phasors[b] = std::polar(features(row, b), features(row, nb + b));
    return phasors;
}

}  // namespace detail

/// First `frames` cycles of a trajectory as a feature matrix.
inline FeatureMatrix build_feature_sequence(const TrajectoryRecord& record, std::size_t frames,
                                            AngleMode mode = AngleMode::relative) {
    require(record.frames.size() >= frames,
            "trajectory has " + std::to_string(record.frames.size()) + " frames, " +
                std::to_string(frames) + " requested");
    require(frames > 0, "at least one frame is required");
    const auto nb = record.frames.front().magnitudes.size();
    FeatureMatrix out(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(2 * nb));
    for (std::size_t t = 0; t < frames; ++t) {
        const auto& f = record.frames[t];
        std::vector<Complex> phasors(nb);
        for (std::size_t b = 0; b < nb; ++b) phasors[b] = std::polar(f.magnitudes[b], f.angles[b]);
        detail::fill_row(out, static_cast<Eigen::Index>(t), phasors, mode);
    }
    return out;
}

/// Seeded random permutation, then a train:test proportional split.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::size_t train_parts,
                                                 std::size_t test_parts, std::uint64_t seed) {
    require(train_parts > 0 && test_parts > 0, "split ratio parts must be positive");
    const std::size_t n = data.size();
    require(n >= train_parts + test_parts,
            "cannot split " + std::to_string(n) + " cases " + std::to_string(train_parts) + ":" +
                std::to_string(test_parts));
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = k;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train =
        std::clamp<std::size_t>(n * train_parts / (train_parts + test_parts), 1, n - 1);

    Dataset train = data.like();
    Dataset test = data.like();
    train.split_tag = "train";
    test.split_tag = "test";
    for (std::size_t k = 0; k < n; ++k)
        (k < n_train ? train : test).cases.push_back(data.cases[order[k]]);
    return {std::move(train), std::move(test)};
}

struct NoiseAudit {
    double max_ratio = 0.0;   // max |e| / |V|
    double mean_ratio = 0.0;
    std::size_t samples = 0;
};

/// Adds to every voltage phasor a perturbation drawn uniformly from the disc
/// of radius tve_max * |V|, then rebuilds the features. Labels are untouched.
inline Dataset inject_pmu_noise(const Dataset& data, double tve_max, std::uint64_t seed,
                                NoiseAudit* audit = nullptr) {
    require(tve_max >= 0.0 && tve_max < 1.0, "TVE bound must lie in [0, 1)");
    if (audit) *audit = NoiseAudit{};
    if (tve_max == 0.0) return data;

    Dataset noisy = data;
    char tag[32];
    std::snprintf(tag, sizeof tag, "tve%.4g", tve_max);
    noisy.noise_tag = tag;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double ratio_sum = 0.0;
    for (auto& c : noisy.cases) {
        for (Eigen::Index t = 0; t < c.features.rows(); ++t) {
            auto phasors = detail::row_phasors(c.features, t);
            for (auto& v : phasors) {
                const double radius = tve_max * std::abs(v) * std::sqrt(unit(rng));
                const double phase = 2.0 * std::numbers::pi * unit(rng);
                const Complex e = std::polar(radius, phase);
                if (audit && std::abs(v) > 0.0) {
                    const double ratio = std::abs(e) / std::abs(v);
                    audit->max_ratio = std::max(audit->max_ratio, ratio);
                    ratio_sum += ratio;
                    ++audit->samples;
                }
                v += e;
            }
            detail::fill_row(c.features, t, phasors, data.angle_mode);
        }
    }
    if (audit && audit->samples > 0) audit->mean_ratio = ratio_sum / static_cast<double>(audit->samples);
    return noisy;
}

/// Restricts features to a bus subset (indices into the bus list, in the
/// given order). Relative angles are re-referenced to the subset's own mean,
/// as a PMU deployment covering only those buses would see them.
inline Dataset select_buses(const Dataset& data, const std::vector<std::size_t>& buses) {
    require(!buses.empty(), "bus subset must not be empty");
    for (auto b : buses) require(b < data.bus_count, "bus index out of range");
    std::vector<std::size_t> sorted = buses;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "duplicate bus in subset");
    bool identity = buses.size() == data.bus_count;
    for (std::size_t k = 0; identity && k < buses.size(); ++k) identity = buses[k] == k;
    if (identity) return data;

    Dataset out = data;
    out.bus_count = buses.size();
    const auto nb = static_cast<Eigen::Index>(data.bus_count);
    const auto ns = static_cast<Eigen::Index>(buses.size());
    for (auto& c : out.cases) {
        FeatureMatrix reduced(c.features.rows(), 2 * ns);
        for (Eigen::Index t = 0; t < c.features.rows(); ++t) {
            std::vector<Complex> phasors(buses.size());
            for (Eigen::Index s = 0; s < ns; ++s)
                phasors[s] = std::polar(c.features(t, buses[s]), c.features(t, nb + buses[s]));
            detail::fill_row(reduced, t, phasors, data.angle_mode);
        }
        c.features = std::move(reduced);
    }
    return out;
}

/// Keeps only the first `frames` cycles of every case.
inline Dataset truncate_frames(const Dataset& data, std::size_t frames) {
    require(frames >= 1 && frames <= data.frames,
            "cannot truncate to " + std::to_string(frames) + " of " + std::to_string(data.frames) +
                " frames");
    Dataset out = data;
    out.frames = frames;
    for (auto& c : out.cases) c.features = FeatureMatrix(c.features.topRows(frames));
    return out;
}

// --- persistence ----------------------------------------------------------

inline constexpr int dataset_format_version = 1;

inline nlohmann::json spec_to_json(const ContingencySpec& spec) {
    nlohmann::json j;
    j["topology"] = spec.out_branch ? nlohmann::json(*spec.out_branch) : nlohmann::json("nominal");
    j["load_ratio"] = spec.load_ratio;
    if (spec.fault.kind == Fault::Kind::bus) {
        j["fault"] = {{"bus", spec.fault.bus_id}};
    } else {
        j["fault"] = {{"branch", spec.fault.branch}, {"position", spec.fault.position}};
    }
    j["clearing_time"] = spec.clearing_time;
    j["seed"] = spec.seed;
    return j;
}

inline ContingencySpec spec_from_json(const nlohmann::json& j) {
    ContingencySpec spec;
    if (!j.at("topology").is_string()) spec.out_branch = j.at("topology").get<std::size_t>();
    spec.load_ratio = j.at("load_ratio").get<double>();
    const auto& f = j.at("fault");
    if (f.contains("bus"))
        spec.fault = Fault::at_bus(f.at("bus").get<int>());
    else
        spec.fault = Fault::on_line(f.at("branch").get<std::size_t>(), f.at("position").get<double>());
    spec.clearing_time = j.at("clearing_time").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    return spec;
}

/// One JSON header line followed by one JSON line per case.
inline void write_dataset(std::ostream& out, const Dataset& data) {
    nlohmann::json header = {
        {"format", "tsas-dataset"},      {"version", dataset_format_version},
        {"bus_count", data.bus_count},   {"frames", data.frames},
        {"cycle_rate", data.cycle_rate}, {"grid", data.grid_name},
        {"seed", data.seed},             {"split", data.split_tag},
        {"angle_mode", to_string(data.angle_mode)},
        {"noise", data.noise_tag},       {"case_count", data.size()},
    };
    out << header.dump() << '\n';
    for (const auto& c : data.cases) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index t = 0; t < c.features.rows(); ++t) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index k = 0; k < c.features.cols(); ++k) row.push_back(c.features(t, k));
            rows.push_back(std::move(row));
        }
        nlohmann::json line = {
            {"case_id", c.case_id},
            {"spec", spec_to_json(c.spec)},
            {"label", {{"eta", c.label.eta}, {"y", c.label.y}}},
            {"delta_max", c.delta_max},
            {"features", std::move(rows)},
        };
        out << line.dump() << '\n';
    }
}

inline Dataset read_dataset(std::istream& in) {
    Dataset data;
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "dataset file is empty");
    try {
        const auto header = nlohmann::json::parse(line);
        require(header.at("format") == "tsas-dataset", "not a tsas dataset file");
        require(header.at("version").get<int>() == dataset_format_version,
                "unsupported dataset format version");
        data.bus_count = header.at("bus_count").get<std::size_t>();
        data.frames = header.at("frames").get<std::size_t>();
        data.cycle_rate = header.at("cycle_rate").get<double>();
        data.grid_name = header.at("grid").get<std::string>();
        data.seed = header.at("seed").get<std::uint64_t>();
        data.split_tag = header.at("split").get<std::string>();
        data.angle_mode = angle_mode_from_string(header.at("angle_mode").get<std::string>());
        data.noise_tag = header.value("noise", std::string("clean"));
        const auto count = header.at("case_count").get<std::size_t>();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            LabeledSequence c;
            c.case_id = j.at("case_id").get<std::string>();
            c.spec = spec_from_json(j.at("spec"));
            c.label.eta = j.at("label").at("eta").get<double>();
            c.label.y = j.at("label").at("y").get<int>();
            c.delta_max = j.at("delta_max").get<double>();
            const auto& rows = j.at("features");
            c.features.resize(static_cast<Eigen::Index>(rows.size()),
                              static_cast<Eigen::Index>(data.feature_width()));
            for (std::size_t t = 0; t < rows.size(); ++t) {
                require(rows[t].size() == data.feature_width(), "feature row has the wrong width");
                for (std::size_t k = 0; k < rows[t].size(); ++k)
                    c.features(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) =
                        rows[t][k].get<double>();
            }
            data.cases.push_back(std::move(c));
        }
        require(data.cases.size() == count, "dataset case count does not match its header");
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed dataset file: ") + e.what());
    }
    validate(data);
    return data;
}

inline void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write " + path);
    write_dataset(out, data);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot read " + path);
    return read_dataset(in);
}

}  // namespace tsas

#pragma once

// Versioned JSON model file: architecture header, then every tensor with
// its shape and row-major values.

#include <fstream>

#include <nlohmann/json.hpp>

#include "tsas/lstm.hpp"

namespace tsas {

inline constexpr int model_format_version = 1;

struct ModelMetadata {
    std::size_t bus_count = 0;
    std::size_t window = 0;  // training sequence length T
    bool per_timestep = true;
    std::string angle_mode = "relative";
    std::string config_hash;
};

struct ModelFile {
    ModelParams params;
    ModelMetadata meta;
};

inline nlohmann::json model_to_json(const ModelParams& params, const ModelMetadata& meta) {
    const auto shape = params.shape();
    nlohmann::json j;
    j["format"] = "tsas-model";
    j["version"] = model_format_version;
    j["architecture"] = {
        {"input_size", shape.input_size}, {"hidden", shape.hidden},       {"dense", shape.dense},
        {"bus_count", meta.bus_count},    {"window", meta.window},        {"per_timestep", meta.per_timestep},
        {"angle_mode", meta.angle_mode},  {"config_hash", meta.config_hash},
    };
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& view : tensor_views(const_cast<ModelParams&>(params))) {
        // Eigen storage is column-major; emit row-major.
        nlohmann::json values = nlohmann::json::array();
        for (Eigen::Index r = 0; r < view.rows; ++r)
            for (Eigen::Index c = 0; c < view.cols; ++c) values.push_back(view.values[c * view.rows + r]);
        tensors.push_back({{"name", view.name}, {"shape", {view.rows, view.cols}}, {"values", values}});
    }
    j["tensors"] = std::move(tensors);
    if (params.standardizes())
        j["input_standardization"] = {
            {"shift", std::vector<double>(params.input_shift.data(), params.input_shift.data() + params.input_shift.size())},
            {"scale", std::vector<double>(params.input_scale.data(), params.input_scale.data() + params.input_scale.size())}};
    return j;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
    try {
        require(j.at("format") == "tsas-model", "not a tsas model file");
        require(j.at("version").get<int>() == model_format_version, "unsupported model format version");
        const auto& arch = j.at("architecture");
        ModelShape shape;
        shape.input_size = arch.at("input_size").get<std::size_t>();
        shape.hidden = arch.at("hidden").get<std::vector<std::size_t>>();
        shape.dense = arch.at("dense").get<std::size_t>();
        ModelFile file;
        file.params = ModelParams::zeros(shape);
        file.meta.bus_count = arch.at("bus_count").get<std::size_t>();
        file.meta.window = arch.at("window").get<std::size_t>();
        file.meta.per_timestep = arch.at("per_timestep").get<bool>();
        file.meta.angle_mode = arch.at("angle_mode").get<std::string>();
        file.meta.config_hash = arch.value("config_hash", std::string());

        auto views = tensor_views(file.params);
        const auto& tensors = j.at("tensors");
        require(tensors.size() == views.size(), "model file has " + std::to_string(tensors.size()) +
                                                    " tensors, architecture needs " +
                                                    std::to_string(views.size()));
        for (std::size_t t = 0; t < views.size(); ++t) {
            const auto& tj = tensors[t];
            const auto& view = views[t];
            require(tj.at("name") == view.name, "unexpected tensor " + tj.at("name").get<std::string>() +
                                                     " (expected " + view.name + ")");
            const auto dims = tj.at("shape").get<std::vector<Eigen::Index>>();
            require(dims.size() == 2 && dims[0] == view.rows && dims[1] == view.cols,
                    "tensor " + view.name + " has a shape that does not match the architecture");
            const auto& values = tj.at("values");
            require(values.size() == view.values.size(), "tensor " + view.name + " has the wrong value count");
            std::size_t k = 0;
            for (Eigen::Index r = 0; r < view.rows; ++r)
                for (Eigen::Index c = 0; c < view.cols; ++c)
                    view.values[c * view.rows + r] = values[k++].get<double>();
        }
        if (j.contains("input_standardization")) {
            const auto shift = j["input_standardization"].at("shift").get<std::vector<double>>();
            const auto scale = j["input_standardization"].at("scale").get<std::vector<double>>();
            require(shift.size() == shape.input_size && scale.size() == shape.input_size,
                    "input standardization does not match the input width");
            file.params.input_shift = Eigen::Map<const Eigen::VectorXd>(shift.data(), shift.size());
            file.params.input_scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), scale.size());
        }
        return file;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed model file: ") + e.what());
    }
}

inline void save_model(const std::string& path, const ModelParams& params, const ModelMetadata& meta) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write " + path);
    out << model_to_json(params, meta).dump(1) << '\n';
}

inline ModelFile load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot read " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed model file " + path + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace tsas

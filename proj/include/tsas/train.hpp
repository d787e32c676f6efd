#pragma once

// Mini-batch training with Adam and validation-based early stopping.

#include <chrono>
#include <optional>
#include <random>

#include "tsas/adam.hpp"
#include "tsas/dataset.hpp"

namespace tsas {

struct TrainConfig {
    std::size_t max_epochs = 100;
    std::size_t batch_size = 32;
    std::optional<std::size_t> patience = 10;  // nullopt disables early stopping
    std::uint64_t seed = 0;
    bool per_timestep = true;
    std::vector<std::size_t> hidden{128, 128};
    std::size_t dense = 32;
    AdamHyper adam{};
    bool standardize = true;  // per-column z-score fitted on the training cases
    std::size_t gradient_chunks = 1;  // batch slices computed in parallel, summed in slice order
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double valid_loss = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double seconds = 0.0;
};

/// Tracks the best validation loss and decides when to stop.
class EarlyStopping {
public:
    explicit EarlyStopping(std::optional<std::size_t> patience) : patience_(patience) {}

    /// Records one epoch's loss; returns true if it is a new best.
    bool observe(double loss) {
        ++epoch_;
        if (!best_epoch_ || loss < best_loss_) {
            best_loss_ = loss;
            best_epoch_ = epoch_;
            return true;
        }
        return false;
    }

    bool should_stop() const {
        return patience_ && best_epoch_ && epoch_ - *best_epoch_ >= *patience_;
    }

    std::size_t best_epoch() const { return best_epoch_.value_or(0); }
    double best_loss() const { return best_loss_; }

private:
    std::optional<std::size_t> patience_;
    std::size_t epoch_ = 0;
    std::optional<std::size_t> best_epoch_;
    double best_loss_ = 0.0;
};

inline std::vector<Example> make_examples(const Dataset& data) {
    std::vector<Example> out;
    out.reserve(data.size());
    for (const auto& c : data.cases) out.push_back({&c.features, c.label.y});
    return out;
}

/// Mean per-case loss over a dataset.
inline double dataset_loss(const ModelParams& params, const Dataset& data, bool per_timestep = true,
                           std::size_t chunk = 256) {
    require(!data.empty(), "empty dataset");
    const auto examples = make_examples(data);
    double total = 0.0;
    for (std::size_t k = 0; k < examples.size(); k += chunk) {
        const auto len = std::min(chunk, examples.size() - k);
        total += batch_loss(params, std::span<const Example>(examples).subspan(k, len), per_timestep);
    }
    return total / static_cast<double>(examples.size());
}

/// Holds out a seeded `fraction` of the cases for validation (at least one).
inline std::pair<Dataset, Dataset> validation_split(const Dataset& data, double fraction,
                                                    std::uint64_t seed) {
    require(fraction > 0.0 && fraction < 1.0, "validation fraction must lie in (0, 1)");
    require(data.size() >= 2, "need at least two cases to hold out a validation set");
    std::vector<std::size_t> order(data.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_valid = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(fraction * static_cast<double>(data.size()))), 1,
        data.size() - 1);
    std::vector<std::size_t> valid_idx(order.begin(), order.begin() + n_valid);
    std::sort(valid_idx.begin(), valid_idx.end());
    Dataset fit = data.like();
    Dataset valid = data.like();
    valid.split_tag = data.split_tag + "-valid";
    std::size_t v = 0;
    for (std::size_t k = 0; k < data.size(); ++k) {
        if (v < valid_idx.size() && valid_idx[v] == k) {
            valid.cases.push_back(data.cases[k]);
            ++v;
        } else {
            fit.cases.push_back(data.cases[k]);
        }
    }
    return {std::move(fit), std::move(valid)};
}

/// Column means and inverse standard deviations over every frame of every
/// case. Near-constant columns keep scale 1.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> fit_standardization(const Dataset& data) {
    require(!data.empty(), "empty dataset");
    const auto width = static_cast<Eigen::Index>(data.feature_width());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(width), sq = Eigen::VectorXd::Zero(width);
    double rows = 0.0;
    for (const auto& c : data.cases) {
        sum += c.features.colwise().sum().transpose();
        sq += c.features.array().square().colwise().sum().matrix().transpose();
        rows += static_cast<double>(c.features.rows());
    }
    const Eigen::VectorXd mean = sum / rows;
    Eigen::VectorXd scale(width);
    for (Eigen::Index k = 0; k < width; ++k) {
        const double var = std::max(0.0, sq(k) / rows - mean(k) * mean(k));
        scale(k) = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return {mean, scale};
}

namespace detail {

inline void accumulate(ModelParams& into, const ModelParams& add) {
    auto a = tensor_views(into);
    auto b = tensor_views(const_cast<ModelParams&>(add));
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t k = 0; k < a[t].values.size(); ++k) a[t].values[k] += b[t].values[k];
}

inline void scale(ModelParams& p, double factor) {
    for (auto& v : tensor_views(p))
        for (auto& x : v.values) x *= factor;
}

// Batch gradient split into contiguous chunks, summed in chunk order.
inline LossAndGradient chunked_gradient(const ModelParams& params, std::span<const Example> batch,
                                        bool per_timestep, std::size_t chunks) {
    chunks = std::clamp<std::size_t>(chunks, 1, batch.size());
    if (chunks == 1) return backprop_gradients(params, batch, per_timestep);
    const std::size_t per = (batch.size() + chunks - 1) / chunks;
    const std::size_t count = (batch.size() + per - 1) / per;
    auto parts = parallel_map<LossAndGradient>(
        count,
        [&](std::size_t c) {
            const auto begin = c * per;
            return backprop_gradients(params, batch.subspan(begin, std::min(per, batch.size() - begin)),
                                      per_timestep);
        },
        count);
    LossAndGradient total = std::move(parts[0]);
    for (std::size_t c = 1; c < parts.size(); ++c) {
        total.loss += parts[c].loss;
        accumulate(total.gradient, parts[c].gradient);
    }
    return total;
}

}  // namespace detail

/// Trains on `train` and returns the parameters with the lowest loss on
/// `valid`. Batch gradients are averaged over the batch.
inline TrainResult train_model(const Dataset& train, const Dataset& valid, const TrainConfig& config) {
    require(!train.empty(), "training set is empty");
    require(!valid.empty(), "validation set is empty");
    require(train.feature_width() == valid.feature_width() && train.frames == valid.frames,
            "training and validation sets differ in width or length");
    require(config.batch_size >= 1, "batch size must be positive");
    require(config.max_epochs >= 1, "at least one epoch is required");
    const auto start = std::chrono::steady_clock::now();

    ModelShape shape{train.feature_width(), config.hidden, config.dense};
    ModelParams params = ModelParams::initialized(shape, derive_seed(config.seed, "init"));
    if (config.standardize) std::tie(params.input_shift, params.input_scale) = fit_standardization(train);
    AdamState adam = AdamState::fresh(params, config.adam);
    std::mt19937_64 batch_rng(derive_seed(config.seed, "batches"));

    auto examples = make_examples(train);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

    TrainResult result;
    EarlyStopping stopper(config.patience);
    result.params = params;
    std::vector<Example> batch;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), batch_rng);
        double train_loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            batch.clear();
            for (std::size_t k = b; k < std::min(order.size(), b + config.batch_size); ++k)
                batch.push_back(examples[order[k]]);
            auto lg = detail::chunked_gradient(params, batch, config.per_timestep, config.gradient_chunks);
            train_loss += lg.loss;
            detail::scale(lg.gradient, 1.0 / static_cast<double>(batch.size()));
            adam_update(params, lg.gradient, adam);
        }
        EpochRecord rec{epoch, train_loss / static_cast<double>(examples.size()),
                        dataset_loss(params, valid, config.per_timestep)};
        result.history.push_back(rec);
        if (stopper.observe(rec.valid_loss)) result.params = params;
        if (stopper.should_stop()) break;
    }
    result.best_epoch = stopper.best_epoch();
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

/// Holds out 10% of `train` for validation, then trains.
inline TrainResult train_with_holdout(const Dataset& train, const TrainConfig& config,
                                      double valid_fraction = 0.1) {
    auto [fit, valid] = validation_split(train, valid_fraction, derive_seed(config.seed, "validation"));
    return train_model(fit, valid, config);
}

}  // namespace tsas

#pragma once

// Stacked LSTM sequence classifier: cell equations, per-cycle scoring through
// a dense tanh layer and a sigmoid head, binary cross-entropy, and exact
// gradients by backpropagation through time.
//
// Each gate g in {input, candidate, forget, output} has its own W_g (hidden x
// input), U_g (hidden x hidden) and b_g. For one cell step:
//   i = sigm(W_i x + U_i h + b_i)     c = tanh(W_c x + U_c h + b_c)
//   f = sigm(W_f x + U_f h + b_f)     o = sigm(W_o x + U_o h + b_o)
//   C' = f * C + i * c                h' = o * tanh(C')

#include <array>
#include <random>
#include <span>

#include "tsas/common.hpp"

namespace tsas {

enum Gate : std::size_t { gate_input = 0, gate_candidate = 1, gate_forget = 2, gate_output = 3 };
inline constexpr std::array<const char*, 4> gate_names{"input", "candidate", "forget", "output"};

struct ModelShape {
    std::size_t input_size = 0;
    std::vector<std::size_t> hidden{128, 128};
    std::size_t dense = 32;
};

struct GateParams {
    Eigen::MatrixXd w;
    Eigen::MatrixXd u;
    Eigen::VectorXd b;
};

struct LstmLayerParams {
    std::array<GateParams, 4> gates;

    std::size_t input_size() const { return static_cast<std::size_t>(gates[0].w.cols()); }
    std::size_t hidden_size() const { return static_cast<std::size_t>(gates[0].w.rows()); }
};

struct ModelParams {
    std::vector<LstmLayerParams> layers;
    Eigen::MatrixXd dense_w;  // dense x top hidden
    Eigen::VectorXd dense_b;
    Eigen::VectorXd head_w;   // dense
    double head_b = 0.0;
    // Fixed input standardization x' = (x - shift) * scale; empty = identity.
    // Not trained, so not part of tensor_views().
    Eigen::VectorXd input_shift;
    Eigen::VectorXd input_scale;

    bool standardizes() const { return input_shift.size() > 0; }

    Eigen::VectorXd standardize(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        if (!standardizes()) return x;
        return ((x - input_shift).array() * input_scale.array()).matrix();
    }

    ModelShape shape() const {
        ModelShape s;
        s.input_size = layers.empty() ? 0 : layers.front().input_size();
        s.hidden.clear();
        for (const auto& l : layers) s.hidden.push_back(l.hidden_size());
        s.dense = static_cast<std::size_t>(dense_w.rows());
        return s;
    }

    std::size_t input_size() const { return layers.front().input_size(); }

    static ModelParams zeros(const ModelShape& shape) {
        require(shape.input_size > 0, "model input width must be positive");
        require(!shape.hidden.empty(), "model needs at least one LSTM layer");
        require(shape.dense > 0, "dense layer size must be positive");
        ModelParams p;
        std::size_t in = shape.input_size;
        for (auto h : shape.hidden) {
            require(h > 0, "hidden size must be positive");
            LstmLayerParams layer;
            for (auto& g : layer.gates) {
                g.w = Eigen::MatrixXd::Zero(h, in);
                g.u = Eigen::MatrixXd::Zero(h, h);
                g.b = Eigen::VectorXd::Zero(h);
            }
            p.layers.push_back(std::move(layer));
            in = h;
        }
        p.dense_w = Eigen::MatrixXd::Zero(shape.dense, in);
        p.dense_b = Eigen::VectorXd::Zero(shape.dense);
        p.head_w = Eigen::VectorXd::Zero(shape.dense);
        return p;
    }

    /// Uniform [-k, k] weights with k = 1/sqrt(fan-in); forget-gate bias 1,
    /// all other biases 0.
    static ModelParams initialized(const ModelShape& shape, std::uint64_t seed) {
        ModelParams p = zeros(shape);
        std::mt19937_64 rng(seed);
        auto fill = [&rng](Eigen::Ref<Eigen::MatrixXd> m, std::size_t fan_in) {
            const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-k, k);
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
        };
        for (auto& layer : p.layers) {
            for (auto& g : layer.gates) {
                fill(g.w, layer.input_size());
                fill(g.u, layer.hidden_size());
            }
            layer.gates[gate_forget].b.setOnes();
        }
        fill(p.dense_w, static_cast<std::size_t>(p.dense_w.cols()));
        fill(p.head_w, static_cast<std::size_t>(p.head_w.size()));
        return p;
    }
};

/// Named contiguous views of every parameter tensor, in a fixed order.
struct TensorView {
    std::string name;
    std::span<double> values;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};

inline std::vector<TensorView> tensor_views(ModelParams& p) {
    std::vector<TensorView> views;
    auto add = [&views](std::string name, double* data, Eigen::Index rows, Eigen::Index cols) {
        views.push_back({std::move(name), std::span<double>(data, static_cast<std::size_t>(rows * cols)),
                         rows, cols});
    };
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        for (std::size_t g = 0; g < 4; ++g) {
            auto& gp = p.layers[l].gates[g];
            const std::string prefix = "lstm" + std::to_string(l) + "." + gate_names[g];
            add(prefix + ".W", gp.w.data(), gp.w.rows(), gp.w.cols());
            add(prefix + ".U", gp.u.data(), gp.u.rows(), gp.u.cols());
            add(prefix + ".b", gp.b.data(), gp.b.size(), 1);
        }
    }
    add("dense.W", p.dense_w.data(), p.dense_w.rows(), p.dense_w.cols());
    add("dense.b", p.dense_b.data(), p.dense_b.size(), 1);
    add("head.w", p.head_w.data(), p.head_w.size(), 1);
    add("head.b", &p.head_b, 1, 1);
    return views;
}

inline std::size_t parameter_count(const ModelParams& p) {
    std::size_t n = 0;
    for (const auto& v : tensor_views(const_cast<ModelParams&>(p))) n += v.values.size();
    return n;
}

inline void require_same_shape(const ModelParams& a, const ModelParams& b) {
    const auto sa = a.shape();
    const auto sb = b.shape();
    require(sa.input_size == sb.input_size && sa.hidden == sb.hidden && sa.dense == sb.dense,
            "parameter sets have different shapes");
}

// --- forward ---------------------------------------------------------------

namespace detail {

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
    return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace detail

/// Activations of one layer at one time step, one column per sequence.
struct CellActivations {
    Eigen::MatrixXd i, c, f, o;
    Eigen::MatrixXd cell;       // C_t
    Eigen::MatrixXd tanh_cell;  // tanh(C_t)
    Eigen::MatrixXd h;          // h_t
};

inline CellActivations cell_step(const LstmLayerParams& layer, const Eigen::MatrixXd& x,
                                 const Eigen::MatrixXd& h_prev, const Eigen::MatrixXd& c_prev) {
    require(static_cast<std::size_t>(x.rows()) == layer.input_size(), "cell input width mismatch");
    require(static_cast<std::size_t>(h_prev.rows()) == layer.hidden_size() &&
                static_cast<std::size_t>(c_prev.rows()) == layer.hidden_size(),
            "cell state size mismatch");
    auto pre = [&](Gate g) -> Eigen::MatrixXd {
        const auto& gp = layer.gates[g];
        Eigen::MatrixXd z = gp.w * x;
        z.noalias() += gp.u * h_prev;
        z.colwise() += gp.b;
        return z;
    };
    CellActivations a;
    a.i = detail::sigmoid(pre(gate_input));
    a.c = pre(gate_candidate).array().tanh().matrix();
    a.f = detail::sigmoid(pre(gate_forget));
    a.o = detail::sigmoid(pre(gate_output));
    a.cell = (a.f.array() * c_prev.array() + a.i.array() * a.c.array()).matrix();
    a.tanh_cell = a.cell.array().tanh().matrix();
    a.h = (a.o.array() * a.tanh_cell.array()).matrix();
    return a;
}

/// One LSTM cell step for a single sequence: returns (h_t, C_t).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> lstm_cell_forward(const Eigen::VectorXd& x,
                                                                     const Eigen::VectorXd& h_prev,
                                                                     const Eigen::VectorXd& c_prev,
                                                                     const LstmLayerParams& layer) {
    const auto a = cell_step(layer, x, h_prev, c_prev);
    return {a.h.col(0), a.cell.col(0)};
}

/// Everything the backward pass needs from a batched forward pass.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;                 // [t]: input x n
    std::vector<std::vector<CellActivations>> cells;     // [t][layer]
    std::vector<Eigen::MatrixXd> dense;                  // [t]: tanh activations, dense x n
    Eigen::MatrixXd scores;                              // T x n
};

/// Batched forward pass over equal-length sequences; states start at zero.
inline ForwardCache forward_batch(const ModelParams& params,
                                  const std::vector<const FeatureMatrix*>& sequences) {
    require(!sequences.empty(), "empty batch");
    const auto steps = sequences.front()->rows();
    const auto n = static_cast<Eigen::Index>(sequences.size());
    const auto width = static_cast<Eigen::Index>(params.input_size());
    for (const auto* s : sequences) {
        require(s->rows() == steps, "sequences in a batch must have equal length");
        require(s->cols() == width, "sequence width " + std::to_string(s->cols()) +
                                        " does not match model input " + std::to_string(width));
    }
    ForwardCache cache;
    cache.scores.resize(steps, n);
    std::vector<Eigen::MatrixXd> h, c;
    for (const auto& layer : params.layers) {
        h.push_back(Eigen::MatrixXd::Zero(layer.hidden_size(), n));
        c.push_back(Eigen::MatrixXd::Zero(layer.hidden_size(), n));
    }
    for (Eigen::Index t = 0; t < steps; ++t) {
        Eigen::MatrixXd x(width, n);
        for (Eigen::Index k = 0; k < n; ++k) x.col(k) = params.standardize(sequences[k]->row(t).transpose());
        cache.inputs.push_back(x);
        std::vector<CellActivations> step;
        const Eigen::MatrixXd* below = &cache.inputs.back();
        for (std::size_t l = 0; l < params.layers.size(); ++l) {
            step.push_back(cell_step(params.layers[l], *below, h[l], c[l]));
            h[l] = step.back().h;
            c[l] = step.back().cell;
            below = &step.back().h;
        }
        Eigen::MatrixXd z = params.dense_w * h.back();
        z.colwise() += params.dense_b;
        Eigen::MatrixXd a = z.array().tanh().matrix();
        const Eigen::RowVectorXd s = (params.head_w.transpose() * a).array() + params.head_b;
        for (Eigen::Index k = 0; k < n; ++k) cache.scores(t, k) = detail::sigmoid(s(k));
        cache.dense.push_back(std::move(a));
        cache.cells.push_back(std::move(step));
    }
    return cache;
}

/// Per-cycle stability scores y_1..y_T in (0, 1) for one sequence.
inline std::vector<double> model_forward(const FeatureMatrix& sequence, const ModelParams& params) {
    const auto cache = forward_batch(params, {&sequence});
    std::vector<double> scores(static_cast<std::size_t>(cache.scores.rows()));
    for (Eigen::Index t = 0; t < cache.scores.rows(); ++t) scores[t] = cache.scores(t, 0);
    return scores;
}

/// Carries recurrent state across calls so each new frame costs one cell step.
class StreamingScorer {
public:
    explicit StreamingScorer(const ModelParams& params) : params_(&params) { reset(); }

    void reset() {
        h_.clear();
        c_.clear();
        for (const auto& layer : params_->layers) {
            h_.push_back(Eigen::MatrixXd::Zero(layer.hidden_size(), 1));
            c_.push_back(Eigen::MatrixXd::Zero(layer.hidden_size(), 1));
        }
        steps_ = 0;
    }

    double push(const Eigen::Ref<const Eigen::VectorXd>& frame) {
        require(static_cast<std::size_t>(frame.size()) == params_->input_size(),
                "frame width does not match the model input");
        Eigen::MatrixXd below = params_->standardize(frame);
        for (std::size_t l = 0; l < params_->layers.size(); ++l) {
            auto a = cell_step(params_->layers[l], below, h_[l], c_[l]);
            h_[l] = a.h;
            c_[l] = a.cell;
            below = std::move(a.h);
        }
        const Eigen::VectorXd dense =
            (params_->dense_w * below.col(0) + params_->dense_b).array().tanh().matrix();
        ++steps_;
        return detail::sigmoid(params_->head_w.dot(dense) + params_->head_b);
    }

    std::size_t steps() const { return steps_; }

private:
    const ModelParams* params_;
    std::vector<Eigen::MatrixXd> h_, c_;
    std::size_t steps_ = 0;
};

// --- loss and gradients ----------------------------------------------------

inline constexpr double score_clamp = 1e-12;

inline double bce_term(double score, int y) {
    if (score <= 0.0 || score >= 1.0) {
        static std::atomic<bool> reported{false};
        if (!reported.exchange(true)) log_warning("saturated score clamped in the loss (reported once)");
    }
    const double s = std::clamp(score, score_clamp, 1.0 - score_clamp);
    return -(y == 1 ? std::log(s) : std::log(1.0 - s));
}

/// Binary cross-entropy of one case: mean over cycles when per_timestep,
/// else on the final score only.
inline double bce_loss(std::span<const double> scores, int y, bool per_timestep = true) {
    require(!scores.empty(), "no scores");
    require(y == 0 || y == 1, "label must be 0 or 1");
    if (!per_timestep) return bce_term(scores.back(), y);
    double sum = 0.0;
    for (double s : scores) sum += bce_term(s, y);
    return sum / static_cast<double>(scores.size());
}

struct Example {
    const FeatureMatrix* features = nullptr;
    int y = 0;
};

struct LossAndGradient {
    double loss = 0.0;  // summed over the batch
    ModelParams gradient;
};

inline double batch_loss(const ModelParams& params, std::span<const Example> batch, bool per_timestep) {
    std::vector<const FeatureMatrix*> seqs;
    for (const auto& e : batch) seqs.push_back(e.features);
    const auto cache = forward_batch(params, seqs);
    double loss = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Eigen::VectorXd col = cache.scores.col(static_cast<Eigen::Index>(k));
        loss += bce_loss(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                         batch[k].y, per_timestep);
    }
    return loss;
}

/// Exact gradient of the summed batch loss by backpropagation through time.
inline LossAndGradient backprop_gradients(const ModelParams& params, std::span<const Example> batch,
                                          bool per_timestep = true) {
    require(!batch.empty(), "empty batch");
    std::vector<const FeatureMatrix*> seqs;
    for (const auto& e : batch) seqs.push_back(e.features);
    const auto cache = forward_batch(params, seqs);
    const auto steps = cache.scores.rows();
    const auto n = cache.scores.cols();
    const auto layers = params.layers.size();

    LossAndGradient out;
    out.gradient = ModelParams::zeros(params.shape());
    auto& grad = out.gradient;

    Eigen::RowVectorXd labels(n);
    for (Eigen::Index k = 0; k < n; ++k) labels(k) = batch[k].y;
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::VectorXd col = cache.scores.col(k);
        out.loss += bce_loss(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                             batch[k].y, per_timestep);
    }

    std::vector<Eigen::MatrixXd> dh_next, dc_next;
    for (const auto& layer : params.layers) {
        dh_next.push_back(Eigen::MatrixXd::Zero(layer.hidden_size(), n));
        dc_next.push_back(Eigen::MatrixXd::Zero(layer.hidden_size(), n));
    }

    for (Eigen::Index t = steps - 1; t >= 0; --t) {
        // d(loss)/d(head pre-activation) = weight * (y_hat - y)
        double weight = per_timestep ? 1.0 / static_cast<double>(steps) : (t == steps - 1 ? 1.0 : 0.0);
        const Eigen::RowVectorXd ds = weight * (cache.scores.row(t) - labels);
        const auto& a = cache.dense[t];
        grad.head_w.noalias() += a * ds.transpose();
        grad.head_b += ds.sum();
        const Eigen::MatrixXd dz =
            ((params.head_w * ds).array() * (1.0 - a.array().square())).matrix();
        const auto& top_h = cache.cells[t][layers - 1].h;
        grad.dense_w.noalias() += dz * top_h.transpose();
        grad.dense_b += dz.rowwise().sum();
        Eigen::MatrixXd dh_from_above = params.dense_w.transpose() * dz;

        for (std::size_t l = layers; l-- > 0;) {
            const auto& act = cache.cells[t][l];
            const auto& layer = params.layers[l];
            const Eigen::MatrixXd& x = l == 0 ? cache.inputs[t] : cache.cells[t][l - 1].h;
            const Eigen::Index hs = static_cast<Eigen::Index>(layer.hidden_size());
            const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(hs, n);
            const Eigen::MatrixXd& h_prev = t > 0 ? cache.cells[t - 1][l].h : zero;
            const Eigen::MatrixXd& c_prev = t > 0 ? cache.cells[t - 1][l].cell : zero;

            const Eigen::ArrayXXd dh = (dh_from_above + dh_next[l]).array();
            const Eigen::ArrayXXd dc =
                dh * act.o.array() * (1.0 - act.tanh_cell.array().square()) + dc_next[l].array();

            std::array<Eigen::MatrixXd, 4> dpre;
            dpre[gate_input] = (dc * act.c.array() * act.i.array() * (1.0 - act.i.array())).matrix();
            dpre[gate_candidate] = (dc * act.i.array() * (1.0 - act.c.array().square())).matrix();
            dpre[gate_forget] = (dc * c_prev.array() * act.f.array() * (1.0 - act.f.array())).matrix();
            dpre[gate_output] = (dh * act.tanh_cell.array() * act.o.array() * (1.0 - act.o.array())).matrix();

            Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(x.rows(), n);
            Eigen::MatrixXd dh_prev = Eigen::MatrixXd::Zero(hs, n);
            for (std::size_t g = 0; g < 4; ++g) {
                auto& gg = grad.layers[l].gates[g];
                const auto& gp = layer.gates[g];
                gg.w.noalias() += dpre[g] * x.transpose();
                gg.u.noalias() += dpre[g] * h_prev.transpose();
                gg.b += dpre[g].rowwise().sum();
                dx.noalias() += gp.w.transpose() * dpre[g];
                dh_prev.noalias() += gp.u.transpose() * dpre[g];
            }
            dh_next[l] = std::move(dh_prev);
            dc_next[l] = (dc * act.f.array()).matrix();
            dh_from_above = std::move(dx);
        }
    }
    return out;
}

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    return std::abs(analytic - numeric) / denom;
}

/// Max relative_error over all parameters, numeric gradients by central
/// differences of the summed batch loss.
inline double gradient_check(const ModelParams& params, std::span<const Example> batch,
                             const ModelParams& analytic, double step = 1e-5,
                             bool per_timestep = true) {
    require_same_shape(params, analytic);
    ModelParams probe = params;
    auto probe_views = tensor_views(probe);
    auto analytic_views = tensor_views(const_cast<ModelParams&>(analytic));
    double worst = 0.0;
    for (std::size_t v = 0; v < probe_views.size(); ++v) {
        auto values = probe_views[v].values;
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double saved = values[k];
            values[k] = saved + step;
            const double up = batch_loss(probe, batch, per_timestep);
            values[k] = saved - step;
            const double down = batch_loss(probe, batch, per_timestep);
            values[k] = saved;
            const double numeric = (up - down) / (2.0 * step);
            worst = std::max(worst, relative_error(analytic_views[v].values[k], numeric));
        }
    }
    return worst;
}

inline double gradient_check(const ModelParams& params, std::span<const Example> batch,
                             double step = 1e-5, bool per_timestep = true) {
    const auto analytic = backprop_gradients(params, batch, per_timestep).gradient;
    return gradient_check(params, batch, analytic, step, per_timestep);
}

}  // namespace tsas

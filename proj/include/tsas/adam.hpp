#pragma once

#include "tsas/lstm.hpp"

namespace tsas {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    ModelParams m;
    ModelParams v;
    std::uint64_t step = 0;
    AdamHyper hyper{};

    static AdamState fresh(const ModelParams& like, AdamHyper hyper = {}) {
        return {ModelParams::zeros(like.shape()), ModelParams::zeros(like.shape()), 0, hyper};
    }
};

/// One bias-corrected Adam step, in place.
inline void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state) {
    require_same_shape(params, grads);
    require_same_shape(params, state.m);
    const auto& h = state.hyper;
    ++state.step;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    auto p = tensor_views(params);
    auto g = tensor_views(const_cast<ModelParams&>(grads));
    auto m = tensor_views(state.m);
    auto v = tensor_views(state.v);
    for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t k = 0; k < p[t].values.size(); ++k) {
            const double gk = g[t].values[k];
            double& mk = m[t].values[k];
            double& vk = v[t].values[k];
            mk = h.beta1 * mk + (1.0 - h.beta1) * gk;
            vk = h.beta2 * vk + (1.0 - h.beta2) * gk * gk;
            const double m_hat = mk / c1;
            const double v_hat = vk / c2;
            p[t].values[k] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
        }
    }
}

}  // namespace tsas

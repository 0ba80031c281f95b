#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "radsum/model.hpp"

namespace radsum {

struct AdamWConfig {
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    bool clip_enabled = true;

    void validate() const {
        if (lr <= 0.0) throw std::invalid_argument("adamw: lr must be > 0");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw std::invalid_argument("adamw: betas must lie in [0, 1)");
        if (eps <= 0.0) throw std::invalid_argument("adamw: eps must be > 0");
        if (weight_decay < 0.0) throw std::invalid_argument("adamw: weight_decay must be >= 0");
        if (clip_enabled && clip_norm <= 0.0)
            throw std::invalid_argument("adamw: clip_norm must be > 0 when clipping");
    }
};

// Gradients reduced per named parameter, in parameter declaration order.
template <typename S>
using NamedGradsT = std::vector<std::pair<std::string, std::vector<S>>>;

template <typename S>
struct AdamWStateT {
    // First/second moments per trainable tensor name.
    std::unordered_map<std::string, std::pair<std::vector<S>, std::vector<S>>> moments;
    int64_t step = 0;
};

template <typename S>
AdamWStateT<S> make_adamw_state(const ModelParamsT<S>& params, const FreezeMask& mask) {
    AdamWStateT<S> state;
    for (const auto& [name, t] : params.named) {
        auto it = mask.find(name);
        if (it == mask.end() || !it->second) continue;
        state.moments.emplace(name, std::make_pair(std::vector<S>(t.numel(), S(0)),
                                                   std::vector<S>(t.numel(), S(0))));
    }
    return state;
}

// Scales all gradients by clip_norm / ||g|| when the global L2 norm exceeds
// clip_norm; returns the factor applied.
template <typename S>
double clip_grad_norm(NamedGradsT<S>& grads, double clip_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (S x : g) {
            const double v = static_cast<double>(x);
            if (!std::isfinite(v))
                throw std::runtime_error("clip_grad_norm: non-finite gradient in " + name);
            sq += v * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= clip_norm) return 1.0;
    const double factor = clip_norm / norm;
    for (auto& [name, g] : grads)
        for (auto& x : g) x = static_cast<S>(static_cast<double>(x) * factor);
    return factor;
}

// One decoupled-weight-decay Adam step over the trainable tensors. Frozen
// tensors and their absent moments are untouched; the step counter advances
// once per call.
template <typename S>
void adamw_step(ModelParamsT<S>& params, const NamedGradsT<S>& grads, AdamWStateT<S>& state,
                const AdamWConfig& config, const FreezeMask& mask) {
    config.validate();
    std::unordered_map<std::string, const std::vector<S>*> grad_by_name;
    for (const auto& [name, g] : grads) grad_by_name.emplace(name, &g);

    ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

    for (auto& [name, tensor] : params.named) {
        auto mit = mask.find(name);
        if (mit == mask.end() || !mit->second) continue;
        auto git = grad_by_name.find(name);
        if (git == grad_by_name.end())
            throw std::runtime_error("adamw_step: missing gradient for " + name);
        auto sit = state.moments.find(name);
        if (sit == state.moments.end())
            throw std::runtime_error("adamw_step: missing optimizer state for " + name);

        const std::vector<S>& g = *git->second;
        auto& [m, v] = sit->second;
        auto& theta = tensor.mutable_value();
        if (g.size() != theta.size() || m.size() != theta.size())
            throw std::runtime_error("adamw_step: size mismatch for " + name);

        for (size_t i = 0; i < theta.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = config.beta1 * static_cast<double>(m[i]) + (1.0 - config.beta1) * gi;
            const double vi =
                config.beta2 * static_cast<double>(v[i]) + (1.0 - config.beta2) * gi * gi;
            m[i] = static_cast<S>(mi);
            v[i] = static_cast<S>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            const double update =
                mhat / (std::sqrt(vhat) + config.eps) +
                config.weight_decay * static_cast<double>(theta[i]);
            theta[i] = static_cast<S>(static_cast<double>(theta[i]) - config.lr * update);
        }
    }
}

using AdamWState = AdamWStateT<float>;
using NamedGrads = NamedGradsT<float>;

}  // namespace radsum

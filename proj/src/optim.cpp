#include "franca/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace franca {

void adamw_step(ParamStore& params, const GradStore& grads, AdamState& state, const AdamWConfig& cfg,
                const std::function<bool(const std::string&)>& decays) {
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("adamw_step: learning rate must be positive");
    if (cfg.weight_decay < 0.0) throw std::invalid_argument("adamw_step: weight decay must be non-negative");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& [name, param] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const auto& g = git->second;
        if (g.size() != param.size()) throw std::invalid_argument("adamw_step: gradient shape mismatch for '" + name + "'");
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(param.size(), 0.0);
        if (v.empty()) v.assign(param.size(), 0.0);
        if (m.size() != param.size() || v.size() != param.size())
            throw std::invalid_argument("adamw_step: moment buffer shape mismatch for '" + name + "'");
        const double wd = (!decays || decays(name)) ? cfg.weight_decay : 0.0;
        auto p = param.mutable_data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg.lr * wd * p[i];
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        round_to_precision(p);
        round_to_precision(m);
        round_to_precision(v);
    }
}

}  // namespace franca

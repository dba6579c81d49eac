#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "franca/params.hpp"

namespace franca {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamState {
    std::int64_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// Decoupled weight decay Adam with bias-corrected moments. Moment buffers are
// created zero-filled on first use. `decays(name)` selects which parameters
// receive weight decay; all of them when empty.
void adamw_step(ParamStore& params, const GradStore& grads, AdamState& state, const AdamWConfig& cfg,
                const std::function<bool(const std::string&)>& decays = {});

}  // namespace franca

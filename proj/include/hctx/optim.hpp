#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hctx/model.hpp"
#include "hctx/tensor.hpp"

namespace hctx {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter first/second moment buffers plus the shared step counter.
class AdamState {
public:
    std::size_t step() const { return step_; }

    friend void adam_step(ParamStore& params, AdamState& state, double lr,
                          const AdamConfig& cfg);

private:
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> moments_;
    std::size_t step_ = 0;
};

// Standard bias-corrected Adam update; every parameter must have a
// populated gradient.
void adam_step(ParamStore& params, AdamState& state, double lr,
               const AdamConfig& cfg = {});

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm; returns the pre-clip norm.
double clip_global_norm(ParamStore& params, double max_norm);

// Linear warmup to peak_lr at warmup_steps, then cosine decay to
// 0.1 * peak_lr at total_steps.
double lr_at(std::size_t step, double peak_lr, std::size_t warmup_steps,
             std::size_t total_steps);

}  // namespace hctx

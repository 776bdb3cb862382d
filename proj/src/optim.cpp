#include "hctx/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hctx {

void adam_step(ParamStore& params, AdamState& state, double lr,
               const AdamConfig& cfg) {
    ++state.step_;
    const double t = static_cast<double>(state.step_);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (const std::string& name : params.names()) {
        Tensor& p = params.get(name);
        if (!p.has_grad()) {
            throw std::runtime_error("adam_step: missing gradient for " + name);
        }
        auto& mom = state.moments_[name];
        if (mom.m.empty()) {
            mom.m.assign(p.numel(), 0.0);
            mom.v.assign(p.numel(), 0.0);
        }
        const auto& g = p.grad();
        double* pv = p.data();
        const bool f32 = p.dtype() == DType::F32;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g[i];
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            double nv = pv[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
            pv[i] = f32 ? static_cast<double>(static_cast<float>(nv)) : nv;
        }
    }
}

double clip_global_norm(ParamStore& params, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip: max_norm must be positive");
    double sq = 0.0;
    for (const std::string& name : params.names()) {
        Tensor& p = params.get(name);
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (const std::string& name : params.names()) {
            Tensor& p = params.get(name);
            if (!p.has_grad()) continue;
            for (double& g : p.grad()) g *= s;
        }
    }
    return norm;
}

double lr_at(std::size_t step, double peak_lr, std::size_t warmup_steps,
             std::size_t total_steps) {
    if (step < 1) throw std::invalid_argument("lr_at: step starts at 1");
    if (warmup_steps < 1) throw std::invalid_argument("lr_at: warmup_steps must be >= 1");
    if (step <= warmup_steps) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (step >= total_steps) return 0.1 * peak_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    const double cosine = 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
    return peak_lr * (0.1 + 0.9 * cosine);
}

}  // namespace hctx

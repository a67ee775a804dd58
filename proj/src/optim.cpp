#include "milbench/optim.hpp"

#include <cmath>
#include <numbers>

#include "milbench/error.hpp"

namespace milbench {

double cosine_lr(std::int64_t step, const OptimHyper& hyper) {
    if (step < 0) {
        fail(ErrorCode::InvalidInput, "cosine_lr: negative step");
    }
    if (hyper.warmup_steps > 0 && step <= hyper.warmup_steps) {
        return hyper.lr_peak * static_cast<double>(step) / static_cast<double>(hyper.warmup_steps);
    }
    if (step >= hyper.total_steps) {
        return hyper.lr_final;
    }
    const double progress = static_cast<double>(step - hyper.warmup_steps) /
                            static_cast<double>(hyper.total_steps - hyper.warmup_steps);
    return hyper.lr_final +
           0.5 * (hyper.lr_peak - hyper.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
    if (params.size() != grads.size()) {
        fail(ErrorCode::ShapeError, "adamw: parameter and gradient tensor counts differ");
    }
    if (m_m.empty()) {
        for (const auto& p : params) {
            m_m.emplace_back(p.size(), 0.0);
            m_v.emplace_back(p.size(), 0.0);
        }
    }
    if (m_m.size() != params.size()) {
        fail(ErrorCode::ShapeError, "adamw: tensor count changed between steps");
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t].size() != grads[t].size() || params[t].size() != m_m[t].size()) {
            fail(ErrorCode::ShapeError, "adamw: tensor size mismatch");
        }
        for (const double g : grads[t]) {
            if (!std::isfinite(g)) {
                fail(ErrorCode::NumericalError, "adamw: non-finite gradient");
            }
        }
    }

    const double lr = cosine_lr(m_step, m_hyper);
    const double t = static_cast<double>(m_step + 1);
    const double bias1 = 1.0 - std::pow(m_hyper.beta1, t);
    const double bias2 = 1.0 - std::pow(m_hyper.beta2, t);
    const double decay = 1.0 - lr * m_hyper.weight_decay;

    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = m_m[k];
        auto& v = m_v[k];
        const auto& g = grads[k];
        auto& p = params[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = m_hyper.beta1 * m[i] + (1.0 - m_hyper.beta1) * g[i];
            v[i] = m_hyper.beta2 * v[i] + (1.0 - m_hyper.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bias1;
            const double v_hat = v[i] / bias2;
            p[i] = p[i] * decay - lr * m_hat / (std::sqrt(v_hat) + m_hyper.eps);
        }
    }
    ++m_step;
}

} // namespace milbench

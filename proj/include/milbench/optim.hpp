#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace milbench {

struct OptimHyper {
    double lr_peak = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
    std::int64_t warmup_steps = 0;
    std::int64_t total_steps = 0;
    double lr_final = 0.0;
};

/// Linear ramp 0 -> lr_peak over warmup_steps, then half-cosine down to
/// lr_final at total_steps. Steps past total_steps return lr_final.
double cosine_lr(std::int64_t step, const OptimHyper& hyper);

/// Decoupled-weight-decay Adam over a fixed list of parameter tensors.
/// The learning rate at each step is cosine_lr(step()).
class AdamW {
public:
    explicit AdamW(OptimHyper hyper) : m_hyper(hyper) {}

    /// Updates params in place. Tensor count and sizes must stay fixed across
    /// calls. Throws Error{NumericalError} on a non-finite gradient and
    /// Error{ShapeError} on a size mismatch; params are untouched on throw.
    void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads);

    std::int64_t step_count() const noexcept { return m_step; }
    const OptimHyper& hyper() const noexcept { return m_hyper; }
    double current_lr() const { return cosine_lr(m_step, m_hyper); }

    const std::vector<std::vector<double>>& first_moment() const noexcept { return m_m; }
    const std::vector<std::vector<double>>& second_moment() const noexcept { return m_v; }

private:
    OptimHyper m_hyper;
    std::int64_t m_step = 0;
    std::vector<std::vector<double>> m_m;
    std::vector<std::vector<double>> m_v;
};

} // namespace milbench

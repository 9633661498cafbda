#include "tve/optim.hpp"

#include <cmath>

namespace tve {

float ScheduleSpec::rate_at(int64_t step) const {
    if (horizon_steps <= 0) throw ValidationError("schedule horizon must be positive");
    if (base_rate < 0.0f || min_rate < 0.0f || warmup_ratio < 0.0f || warmup_ratio > 1.0f)
        throw ValidationError("schedule rates/ratio out of range");
    const int64_t warm = int64_t(std::lround(double(warmup_ratio) * double(horizon_steps)));
    if (step < warm) return base_rate * float(step + 1) / float(warm);
    if (step >= horizon_steps) return min_rate;
    const double t = double(step - warm) / double(horizon_steps - warm);
    const double cos_f = 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    return min_rate + (base_rate - min_rate) * float(cos_f);
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        if (!p.defined()) throw ValidationError("undefined parameter tensor");
        m_.emplace_back(p.data().size(), 0.0f);
        v_.emplace_back(p.data().size(), 0.0f);
    }
}

AdamStepResult AdamOptimizer::step() {
    const float lr = config_.schedule.rate_at(step_);

    for (const Tensor& p : params_) {
        const auto& g = p.grad();
        if (g.empty()) continue;
        if (!all_finite(g)) return {false, lr};
    }

    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    ++step_;
    const double bc1 = 1.0 - std::pow(b1, double(step_));
    const double bc2 = 1.0 - std::pow(b2, double(step_));

    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const auto& g = p.grad();
        if (g.empty()) continue; // parameter not touched by the loss
        auto& data = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < data.size(); ++j) {
            const double gj = g[j];
            m[j] = float(b1 * m[j] + (1.0 - b1) * gj);
            v[j] = float(b2 * v[j] + (1.0 - b2) * gj * gj);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            double w = data[j];
            w -= double(lr) * mhat / (std::sqrt(vhat) + double(config_.eps));
            w -= double(lr) * double(config_.weight_decay) * double(data[j]);
            data[j] = float(w);
        }
    }
    return {true, lr};
}

void AdamOptimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

} // namespace tve

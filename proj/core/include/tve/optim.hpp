#pragma once

#include <cstdint>
#include <vector>

#include "tve/tensor.hpp"

namespace tve {

// Linear warm-up into cosine decay. warmup_steps = round(warmup_ratio * horizon);
// rate rises 0 -> base over the warm-up, then follows a half cosine down to
// min_rate at the horizon. Steps past the horizon stay at min_rate.
struct ScheduleSpec {
    float base_rate = 1e-3f;
    float warmup_ratio = 0.05f;
    int64_t horizon_steps = 1;
    float min_rate = 0.0f;

    float rate_at(int64_t step) const;
};

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
    ScheduleSpec schedule;
};

struct AdamStepResult {
    bool applied = false;     // false when a non-finite gradient skipped the step
    float learning_rate = 0.0f;
};

// Adam with bias correction followed by decoupled weight decay. Holds handles
// to the parameter tensors; moment buffers are shape-congruent with them.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, AdamConfig config);

    // Reads grads off the parameters. If any gradient is non-finite the whole
    // step is skipped (no buffer or parameter changes) and applied=false.
    AdamStepResult step();

    void zero_grad();

    int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    AdamConfig config_;
    int64_t step_ = 0;
};

} // namespace tve

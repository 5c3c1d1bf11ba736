#pragma once

#include <map>
#include <string>

#include "semcomm/params.hpp"

namespace semcomm {

// Piecewise-constant decay: lr(epoch) = base * gamma^floor(epoch/step_size).
struct StepSchedule {
    int step_size = 100;
    float gamma = 0.5f;
};

float step_lr(float base_lr, const StepSchedule& sched, int epoch);

// Adam with bias correction. Moment buffers are keyed by parameter name and
// allocated lazily, so the optimizer can outlive parameter creation order.
class AdamOptimizer {
  public:
    struct Config {
        float lr = 1e-3f;
        float beta1 = 0.9f;
        float beta2 = 0.999f;
        float eps = 1e-8f;
        StepSchedule schedule;
    };

    explicit AdamOptimizer(Config cfg);

    // One update over every trainable entry from its accumulated gradient.
    // A non-empty prefix restricts the update to matching names (used when
    // several networks share one store).
    void step(ParamStore& store, const std::string& prefix = "");
    void set_epoch(int epoch) { epoch_ = epoch; }
    float current_lr() const;
    int steps_taken() const { return t_; }

  private:
    struct Moments {
        Tensor m;
        Tensor v;
    };
    Config cfg_;
    int t_ = 0;
    int epoch_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace semcomm

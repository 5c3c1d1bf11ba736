#include "semcomm/optim.hpp"

#include <cmath>

#include "semcomm/errors.hpp"

namespace semcomm {

float step_lr(float base_lr, const StepSchedule& sched, int epoch) {
    if (epoch < 0) throw ContractError("step_lr: epoch must be >= 0");
    if (sched.step_size < 1) throw ContractError("step_lr: step_size must be >= 1");
    return base_lr * std::pow(sched.gamma, static_cast<float>(epoch / sched.step_size));
}

AdamOptimizer::AdamOptimizer(Config cfg) : cfg_(cfg) {
    if (cfg_.lr < 0) throw ContractError("adam: lr must be >= 0");
    if (cfg_.beta1 <= 0 || cfg_.beta1 >= 1 || cfg_.beta2 <= 0 || cfg_.beta2 >= 1) {
        throw ContractError("adam: betas must lie in (0,1)");
    }
}

float AdamOptimizer::current_lr() const { return step_lr(cfg_.lr, cfg_.schedule, epoch_); }

void AdamOptimizer::step(ParamStore& store, const std::string& prefix) {
    ++t_;
    const float lr = current_lr();
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), t_);

    for (auto& [name, e] : store.entries()) {
        if (!e.trainable) continue;
        if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
        auto it = moments_.find(name);
        if (it == moments_.end()) {
            it = moments_.emplace(name, Moments{Tensor(e.value.shape, 0.0f),
                                                Tensor(e.value.shape, 0.0f)}).first;
        }
        Moments& mo = it->second;
        for (std::size_t i = 0; i < e.value.data.size(); ++i) {
            const float gr = e.grad.data[i];
            mo.m.data[i] = cfg_.beta1 * mo.m.data[i] + (1.0f - cfg_.beta1) * gr;
            mo.v.data[i] = cfg_.beta2 * mo.v.data[i] + (1.0f - cfg_.beta2) * gr * gr;
            const double mhat = mo.m.data[i] / bc1;
            const double vhat = mo.v.data[i] / bc2;
            e.value.data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

}  // namespace semcomm

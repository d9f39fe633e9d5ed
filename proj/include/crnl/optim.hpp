#pragma once

// Optimizers over ParamLists, the stepped learning-rate schedule, and
// gradient clipping. All state is keyed by parameter position, so the
// bound ParamList must stay stable across steps.

#include <memory>
#include <vector>

#include "crnl/layers.hpp"

namespace crnl {

class Optimizer {
  public:
    virtual ~Optimizer() = default;
    virtual void step(const ParamList& params, real lr) = 0;
};

// g' = g + wd*p; v = mu*v + g'; p -= lr*(g' + mu*v)
class NesterovSgd : public Optimizer {
  public:
    NesterovSgd(real momentum, real weight_decay) : momentum_(momentum), wd_(weight_decay) {}
    void step(const ParamList& params, real lr) override;

  private:
    real momentum_, wd_;
    std::vector<std::vector<real>> velocity_;
};

// Adam with optional AMSGrad running max of the second moment.
class Adam : public Optimizer {
  public:
    Adam(bool amsgrad, real weight_decay, real beta1 = 0.9, real beta2 = 0.99, real eps = 1e-8)
        : amsgrad_(amsgrad), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const ParamList& params, real lr) override;

  private:
    bool amsgrad_;
    real wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<real>> m_, v_, vmax_;
};

// lr = init / factor^floor(epoch / every)
real lr_schedule(int epoch, real init_lr, real decay_factor, int decay_every);

real global_grad_norm(const ParamList& params);
// scales gradients so their global norm is at most max_norm
void clip_grad_norm(const ParamList& params, real max_norm);
void zero_grads(const ParamList& params);

}  // namespace crnl

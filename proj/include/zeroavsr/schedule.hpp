#pragma once

#include <cmath>
#include <cstdint>

#include "zeroavsr/common.hpp"

namespace zeroavsr::train {

// Linear ramp to peak, constant hold, exponential decay to peak*final_scale.
// scaled() shrinks the stage lengths for desk-scale runs while keeping the
// shape (e.g. 10k/40k/50k at scale 0.01 -> 100/400/500).
struct TriStageSchedule {
  int64_t warmup_steps = 10000;
  int64_t hold_steps = 40000;
  int64_t decay_steps = 50000;
  double peak_lr = 1e-4;
  double init_scale = 0.01;
  double final_scale = 0.01;

  void validate() const {
    if (warmup_steps < 0 || hold_steps < 0 || decay_steps < 0)
      throw Error("tri-stage step counts must be >= 0");
    if (peak_lr <= 0) throw Error("peak_lr must be > 0");
  }

  TriStageSchedule scaled(double f) const {
    TriStageSchedule s = *this;
    s.warmup_steps = int64_t(std::llround(warmup_steps * f));
    s.hold_steps = int64_t(std::llround(hold_steps * f));
    s.decay_steps = int64_t(std::llround(decay_steps * f));
    return s;
  }

  double lr_at(int64_t step) const {
    if (step < 0) throw Error("lr_at: step must be >= 0");
    if (step < warmup_steps) {
      const double init = peak_lr * init_scale;
      return init + (peak_lr - init) * double(step) / double(warmup_steps);
    }
    step -= warmup_steps;
    if (step < hold_steps) return peak_lr;
    step -= hold_steps;
    if (decay_steps == 0 || step >= decay_steps) return peak_lr * final_scale;
    return peak_lr * std::pow(final_scale, double(step) / double(decay_steps));
  }
};

// Linear ramp then half-cosine down to zero at total_steps.
struct CosineSchedule {
  int64_t warmup_steps = 500;
  int64_t total_steps = 30000;
  double peak_lr = 1e-4;

  void validate() const {
    if (warmup_steps < 0 || warmup_steps >= total_steps)
      throw Error("cosine schedule requires 0 <= warmup < total");
    if (peak_lr <= 0) throw Error("peak_lr must be > 0");
  }

  double lr_at(int64_t step) const {
    if (step < 0) throw Error("lr_at: step must be >= 0");
    if (step < warmup_steps) return peak_lr * double(step) / double(warmup_steps);
    if (step >= total_steps) return 0.0;
    const double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
    return peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
  }
};

}  // namespace zeroavsr::train

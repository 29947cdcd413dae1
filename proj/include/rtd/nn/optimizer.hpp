#pragma once

#include <cstddef>
#include <vector>

#include "rtd/nn/parameters.hpp"

namespace rtd::nn {

// Linear warmup to `peak_lr` over the first warmup_fraction of total_steps,
// then linear decay to zero at total_steps.
struct LinearSchedule {
  std::size_t total_steps = 1;
  double peak_lr = 1e-4;
  double warmup_fraction = 0.1;

  double lr(std::size_t step) const;
};

void sgd_step(ParameterSet& params, const Gradients& grads, double lr);

// Rescales grads in place so their global L2 norm is at most max_norm; returns
// the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(Gradients& grads, double max_norm);

class AdamOptimizer {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamOptimizer(const ParameterSet& params, LinearSchedule schedule, Options options);
  AdamOptimizer(const ParameterSet& params, LinearSchedule schedule)
      : AdamOptimizer(params, schedule, Options{}) {}

  // One update; the k-th call (1-based) uses schedule.lr(k).
  void step(ParameterSet& params, const Gradients& grads);

  std::size_t steps_taken() const { return t_; }
  double current_lr() const { return schedule_.lr(t_); }

 private:
  LinearSchedule schedule_;
  Options options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace rtd::nn

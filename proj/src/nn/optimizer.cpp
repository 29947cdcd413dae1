#include "rtd/nn/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "rtd/common/errors.hpp"

namespace rtd::nn {

double LinearSchedule::lr(std::size_t step) const {
  const double total = static_cast<double>(std::max<std::size_t>(total_steps, 1));
  const double s = std::min(static_cast<double>(step), total);
  const double warmup = warmup_fraction * total;
  if (warmup > 0.0 && s < warmup) return peak_lr * s / warmup;
  if (total <= warmup) return peak_lr;
  return peak_lr * (total - s) / (total - warmup);
}

void sgd_step(ParameterSet& params, const Gradients& grads, double lr) {
  if (!grads.matches(params)) throw StructuralError("sgd_step: gradient shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = static_cast<float>(p[j] - lr * g[j]);
  }
}

double clip_grad_norm(Gradients& grads, double max_norm) {
  const double norm = grads.norm();
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

AdamOptimizer::AdamOptimizer(const ParameterSet& params, LinearSchedule schedule, Options options)
    : schedule_(schedule), options_(options) {
  for (const auto& p : params.all()) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::step(ParameterSet& params, const Gradients& grads) {
  if (!grads.matches(params) || params.size() != m_.size()) {
    throw StructuralError("adam_step: gradient shape mismatch");
  }
  ++t_;
  const double lr = schedule_.lr(t_);
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    const auto& g = grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
      const double update = lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
      p[j] = static_cast<float>(p[j] - update);
    }
  }
}

}  // namespace rtd::nn

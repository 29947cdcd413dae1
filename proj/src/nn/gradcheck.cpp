#include "rtd/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "rtd/common/rng.hpp"

namespace rtd::nn {

namespace {

double eval_loss(const ParameterSet& params, const LossBuilder& loss) {
  Tape tape(params);
  return tape.value(loss(tape))(0, 0);
}

}  // namespace

GradCheckResult grad_check(ParameterSet& params, const LossBuilder& loss, double epsilon,
                           std::size_t n_samples, std::uint64_t seed) {
  Gradients grads(params);
  {
    Tape tape(params, &grads);
    tape.backward(loss(tape));
  }

  // Stratified: every tensor contributes, preferring entries the loss touches
  // so unused embedding rows do not dilute the sample.
  std::vector<std::pair<ParamId, std::size_t>> picked;
  Rng rng(seed);
  const std::size_t per_tensor =
      std::max<std::size_t>(2, (n_samples + params.size() - 1) / std::max<std::size_t>(1, params.size()));
  for (ParamId p = 0; p < params.size(); ++p) {
    std::vector<std::size_t> live, dead;
    for (std::size_t j = 0; j < params[p].size(); ++j) {
      (grads[p][j] != 0.0 ? live : dead).push_back(j);
    }
    std::size_t taken = 0;
    for (auto* pool : {&live, &dead}) {
      for (std::size_t i = 0; i < pool->size() && taken < per_tensor; ++i, ++taken) {
        std::swap((*pool)[i], (*pool)[i + rng.uniform_int(pool->size() - i)]);
        picked.emplace_back(p, (*pool)[i]);
      }
    }
  }

  GradCheckResult result;
  for (const auto& [p, j] : picked) {
    float& slot = params[p].value[j];
    const float original = slot;
    // Parameters are 32-bit: use the step actually representable.
    const float up = static_cast<float>(original + epsilon);
    const float down = static_cast<float>(original - epsilon);
    slot = up;
    const double f_up = eval_loss(params, loss);
    slot = down;
    const double f_down = eval_loss(params, loss);
    slot = original;
    const double numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
    const double analytic = grads[p][j];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.n_checked;
  }
  return result;
}

}  // namespace rtd::nn

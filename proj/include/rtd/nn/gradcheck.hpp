#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "rtd/nn/parameters.hpp"
#include "rtd/nn/tape.hpp"

namespace rtd::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
};

// Builds a scalar loss on the given tape.
using LossBuilder = std::function<Tape::Node(Tape&)>;

// Compares analytic gradients against central finite differences on a seeded
// sample of about n_samples scalar parameters spread over every tensor. The relative error of one entry is
// |a - n| / max(|a|, |n|, 1e-6). The loss must be deterministic (dropout off).
GradCheckResult grad_check(ParameterSet& params, const LossBuilder& loss, double epsilon,
                           std::size_t n_samples = 256, std::uint64_t seed = 0);

}  // namespace rtd::nn

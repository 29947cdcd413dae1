#include "rtd/nn/parameters.hpp"

#include <cmath>

#include "rtd/common/errors.hpp"

namespace rtd::nn {

ParamId ParameterSet::add(std::string name, std::size_t rows, std::size_t cols, Init init,
                          Rng& rng) {
  if (ids_.count(name) != 0) throw StructuralError("duplicate parameter name: " + name);
  Parameter p{name, rows, cols, std::vector<float>(rows * cols, 0.0f)};
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      for (auto& v : p.value) v = 1.0f;
      break;
    case Init::kNormal002:
      for (auto& v : p.value) v = static_cast<float>(0.02 * rng.normal());
      break;
    case Init::kXavier: {
      const double std = std::sqrt(2.0 / static_cast<double>(rows + cols));
      for (auto& v : p.value) v = static_cast<float>(std * rng.normal());
      break;
    }
  }
  const ParamId id = params_.size();
  ids_.emplace(std::move(name), id);
  params_.push_back(std::move(p));
  return id;
}

ParamId ParameterSet::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw LookupError("no parameter named " + name);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Gradients::Gradients(const ParameterSet& params) {
  grads_.reserve(params.size());
  for (const auto& p : params.all()) grads_.emplace_back(p.size(), 0.0);
}

void Gradients::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

void Gradients::scale(double s) {
  for (auto& g : grads_) {
    for (auto& v : g) v *= s;
  }
}

void Gradients::add(const Gradients& other, double weight) {
  if (other.grads_.size() != grads_.size()) throw StructuralError("gradient set size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (other.grads_[i].size() != grads_[i].size()) {
      throw StructuralError("gradient shape mismatch at parameter " + std::to_string(i));
    }
    for (std::size_t j = 0; j < grads_[i].size(); ++j) grads_[i][j] += weight * other.grads_[i][j];
  }
}

double Gradients::norm() const {
  double s = 0.0;
  for (const auto& g : grads_) {
    for (double v : g) s += v * v;
  }
  return std::sqrt(s);
}

bool Gradients::matches(const ParameterSet& params) const {
  if (grads_.size() != params.size()) return false;
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (grads_[i].size() != params[i].size()) return false;
  }
  return true;
}

}  // namespace rtd::nn

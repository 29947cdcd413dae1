#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "rtd/common/rng.hpp"

namespace rtd::nn {

using ParamId = std::size_t;

struct Parameter {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> value;

  std::size_t size() const { return value.size(); }
};

enum class Init { kZeros, kOnes, kNormal002, kXavier };

// Named parameter arrays of one model. Ids are stable under copy, so a model
// holding ParamIds stays valid when copied by value.
class ParameterSet {
 public:
  ParamId add(std::string name, std::size_t rows, std::size_t cols, Init init, Rng& rng);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](ParamId id) { return params_[id]; }
  const Parameter& operator[](ParamId id) const { return params_[id]; }
  const std::vector<Parameter>& all() const { return params_; }

  // Throws LookupError when absent.
  ParamId find(const std::string& name) const;
  bool contains(const std::string& name) const { return ids_.count(name) != 0; }

  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, ParamId> ids_;
};

// Gradient buffers mirroring a ParameterSet, accumulated in 64-bit.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params);

  std::vector<double>& operator[](ParamId id) { return grads_[id]; }
  const std::vector<double>& operator[](ParamId id) const { return grads_[id]; }
  std::size_t size() const { return grads_.size(); }

  void zero();
  void scale(double s);
  void add(const Gradients& other, double weight = 1.0);
  double norm() const;
  bool matches(const ParameterSet& params) const;

 private:
  std::vector<std::vector<double>> grads_;
};

}  // namespace rtd::nn

#include "rtd/common/counters.hpp"

namespace rtd {

Counters& Counters::global() {
  static Counters instance;
  return instance;
}

void Counters::increment(const std::string& name, std::int64_t by) {
  std::lock_guard<std::mutex> lock(mutex_);
  values_[name] += by;
}

std::int64_t Counters::get(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = values_.find(name);
  return it == values_.end() ? 0 : it->second;
}

std::map<std::string, std::int64_t> Counters::snapshot() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return values_;
}

void Counters::reset() {
  std::lock_guard<std::mutex> lock(mutex_);
  values_.clear();
}

}  // namespace rtd

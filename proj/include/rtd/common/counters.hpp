#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>

namespace rtd {

// Process-wide named warning counters ("skipped oversize sentence",
// "empty mask", ...). Thread-safe.
class Counters {
 public:
  static Counters& global();

  void increment(const std::string& name, std::int64_t by = 1);
  std::int64_t get(const std::string& name) const;
  std::map<std::string, std::int64_t> snapshot() const;
  void reset();

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::int64_t> values_;
};

inline void warn_count(const std::string& name, std::int64_t by = 1) {
  Counters::global().increment(name, by);
}

}  // namespace rtd

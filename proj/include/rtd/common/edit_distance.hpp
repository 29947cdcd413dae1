#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace rtd {

// Unit-cost Levenshtein distance between two sequences.
template <typename T>
std::size_t edit_distance(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename T>
std::size_t edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  return edit_distance(std::span<const T>(a), std::span<const T>(b));
}

}  // namespace rtd

#include "rtd/finetune/align.hpp"

#include <algorithm>

namespace rtd::finetune {

std::size_t Alignment::count(OpKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(ops.begin(), ops.end(), [kind](const AlignOp& op) { return op.kind == kind; }));
}

std::size_t Alignment::cost() const { return ops.size() - count(OpKind::kMatch); }

Alignment align(std::span<const corpus::Word> ref, std::span<const corpus::Word> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  Alignment out;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t cur = at(i, j);
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && cur == at(i - 1, j - 1)) {
      out.ops.push_back({OpKind::kMatch, i - 1, j - 1});
      --i, --j;
    } else if (i > 0 && j > 0 && cur == at(i - 1, j - 1) + 1) {
      out.ops.push_back({OpKind::kSubstitute, i - 1, j - 1});
      --i, --j;
    } else if (i > 0 && cur == at(i - 1, j) + 1) {
      out.ops.push_back({OpKind::kDelete, i - 1, std::nullopt});
      --i;
    } else {
      out.ops.push_back({OpKind::kInsert, std::nullopt, j - 1});
      --j;
    }
  }
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

}  // namespace rtd::finetune

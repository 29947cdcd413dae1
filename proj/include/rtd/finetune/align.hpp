#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rtd/corpus/lexicon.hpp"

namespace rtd::finetune {

enum class OpKind { kMatch, kSubstitute, kInsert, kDelete };

struct AlignOp {
  OpKind kind = OpKind::kMatch;
  std::optional<std::size_t> ref_index;  // absent for insertions
  std::optional<std::size_t> hyp_index;  // absent for deletions
  bool operator==(const AlignOp&) const = default;
};

struct Alignment {
  std::vector<AlignOp> ops;

  std::size_t count(OpKind kind) const;
  // #sub + #ins + #del
  std::size_t cost() const;
};

// Minimal unit-cost Levenshtein alignment. On equal cost the backtrace prefers
// match, then substitution, then deletion, then insertion.
Alignment align(std::span<const corpus::Word> ref, std::span<const corpus::Word> hyp);

}  // namespace rtd::finetune

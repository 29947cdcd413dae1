#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "rtd/common/rng.hpp"
#include "rtd/nn/matrix.hpp"
#include "rtd/nn/parameters.hpp"

namespace rtd::nn {

// Reverse-mode recorder over a fixed operator set: embedding gather, affine
// projection, add, layer norm, GELU, multi-head attention, dropout, scaling and
// the two training losses. A tape is bound to one ParameterSet; when built with
// a Gradients sink it records backward closures, otherwise it only evaluates.
class Tape {
 public:
  using Node = std::size_t;
  // Half-open range of key rows a query row may attend to.
  using KeyRange = std::pair<std::size_t, std::size_t>;

  explicit Tape(const ParameterSet& params, Gradients* grads = nullptr);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return grads_ != nullptr; }
  const Matrix& value(Node n) const { return values_[n]; }

  Node constant(Matrix m);
  Node embedding(ParamId table, std::span<const int> ids);
  // x @ W + b with W stored (in, out).
  Node linear(Node x, ParamId weight, ParamId bias);
  Node add(Node a, Node b);
  Node scale(Node x, double s);
  Node layer_norm(Node x, ParamId gamma, ParamId beta);
  Node gelu(Node x);
  // Multi-head scaled dot-product attention; q is (Lq, H), k and v are (Lk, H).
  Node attention(Node q, Node k, Node v, std::size_t heads, bool causal);
  // Same with an explicit key range per query row.
  Node attention(Node q, Node k, Node v, std::size_t heads, std::span<const KeyRange> visible_keys);
  Node dropout(Node x, double rate, Rng& rng);

  // Sum over `rows` of -log softmax(logits[row])[target].
  Node softmax_cross_entropy(Node logits, std::span<const std::size_t> rows,
                             std::span<const int> targets);
  // Sum over rows of weight * BCE(sigmoid(logit), target); logits is (L, 1).
  Node sigmoid_bce(Node logits, std::span<const double> targets, std::span<const double> weights);

  // Backpropagates d(loss)/d(.) into the Gradients sink. loss must be 1x1.
  void backward(Node loss);

 private:
  Node push(Matrix value, std::function<void()> back = {});
  Matrix& grad(Node n);
  bool has_grad(Node n) const { return !grads_of_nodes_[n].empty(); }

  const ParameterSet& params_;
  Gradients* grads_;
  std::vector<Matrix> values_;
  std::vector<Matrix> grads_of_nodes_;
  std::vector<std::function<void()>> backward_;
  bool consumed_ = false;
};

}  // namespace rtd::nn

#include "rtd/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "rtd/common/errors.hpp"

namespace rtd::nn {

namespace {

constexpr double kLayerNormEps = 1e-5;

double dot(const double* a, const float* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tape::Tape(const ParameterSet& params, Gradients* grads) : params_(params), grads_(grads) {
  if (grads_ != nullptr && !grads_->matches(params_)) {
    throw StructuralError("gradient sink does not match parameter set");
  }
}

Tape::Node Tape::push(Matrix value, std::function<void()> back) {
  values_.push_back(std::move(value));
  grads_of_nodes_.emplace_back();
  backward_.push_back(recording() ? std::move(back) : std::function<void()>{});
  return values_.size() - 1;
}

Matrix& Tape::grad(Node n) {
  Matrix& g = grads_of_nodes_[n];
  if (g.empty() && values_[n].rows * values_[n].cols > 0) {
    g = Matrix(values_[n].rows, values_[n].cols);
  }
  return g;
}

Tape::Node Tape::constant(Matrix m) { return push(std::move(m)); }

Tape::Node Tape::embedding(ParamId table, std::span<const int> ids) {
  const Parameter& p = params_[table];
  Matrix out(ids.size(), p.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= p.rows) {
      throw StructuralError("embedding index " + std::to_string(ids[i]) + " out of range for " +
                            p.name);
    }
    const float* src = p.value.data() + static_cast<std::size_t>(ids[i]) * p.cols;
    for (std::size_t j = 0; j < p.cols; ++j) out(i, j) = src[j];
  }
  std::vector<int> saved(ids.begin(), ids.end());
  const Node n = values_.size();
  return push(std::move(out), [this, n, table, saved = std::move(saved)] {
    if (!has_grad(n)) return;
    const Matrix& g = grads_of_nodes_[n];
    auto& dst = (*grads_)[table];
    const std::size_t cols = g.cols;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      double* row = dst.data() + static_cast<std::size_t>(saved[i]) * cols;
      for (std::size_t j = 0; j < cols; ++j) row[j] += g(i, j);
    }
  });
}

Tape::Node Tape::linear(Node x, ParamId weight, ParamId bias) {
  const Parameter& w = params_[weight];
  const Parameter& b = params_[bias];
  const Matrix& in = values_[x];
  if (in.cols != w.rows || b.size() != w.cols) {
    throw StructuralError("linear shape mismatch for " + w.name);
  }
  const std::size_t n_in = w.rows, n_out = w.cols;
  Matrix out(in.rows, n_out);
  for (std::size_t i = 0; i < in.rows; ++i) {
    double* y = out.data.data() + i * n_out;
    for (std::size_t j = 0; j < n_out; ++j) y[j] = b.value[j];
    const double* xr = in.data.data() + i * n_in;
    for (std::size_t k = 0; k < n_in; ++k) {
      const double a = xr[k];
      const float* wr = w.value.data() + k * n_out;
      for (std::size_t j = 0; j < n_out; ++j) y[j] += a * wr[j];
    }
  }
  const Node n = values_.size();
  return push(std::move(out), [this, n, x, weight, bias] {
    if (!has_grad(n)) return;
    const Matrix& dy = grads_of_nodes_[n];
    const Parameter& w = params_[weight];
    const std::size_t n_in = w.rows, n_out = w.cols;
    const Matrix& in = values_[x];
    auto& dw = (*grads_)[weight];
    auto& db = (*grads_)[bias];
    Matrix& dx = grad(x);
    for (std::size_t i = 0; i < dy.rows; ++i) {
      const double* dyr = dy.data.data() + i * n_out;
      const double* xr = in.data.data() + i * n_in;
      double* dxr = dx.data.data() + i * n_in;
      for (std::size_t j = 0; j < n_out; ++j) db[j] += dyr[j];
      for (std::size_t k = 0; k < n_in; ++k) {
        dxr[k] += dot(dyr, w.value.data() + k * n_out, n_out);
        const double a = xr[k];
        double* dwr = dw.data() + k * n_out;
        for (std::size_t j = 0; j < n_out; ++j) dwr[j] += a * dyr[j];
      }
    }
  });
}

Tape::Node Tape::add(Node a, Node b) {
  const Matrix& va = values_[a];
  const Matrix& vb = values_[b];
  if (va.rows != vb.rows || va.cols != vb.cols) throw StructuralError("add shape mismatch");
  Matrix out = va;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
  const Node n = values_.size();
  return push(std::move(out), [this, n, a, b] {
    if (!has_grad(n)) return;
    const Matrix& g = grads_of_nodes_[n];
    Matrix& ga = grad(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    Matrix& gb = grad(b);
    for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
  });
}

Tape::Node Tape::scale(Node x, double s) {
  Matrix out = values_[x];
  for (auto& v : out.data) v *= s;
  const Node n = values_.size();
  return push(std::move(out), [this, n, x, s] {
    if (!has_grad(n)) return;
    const Matrix& g = grads_of_nodes_[n];
    Matrix& gx = grad(x);
    for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += s * g.data[i];
  });
}

Tape::Node Tape::layer_norm(Node x, ParamId gamma, ParamId beta) {
  const Matrix& in = values_[x];
  const Parameter& g = params_[gamma];
  const Parameter& b = params_[beta];
  if (g.size() != in.cols || b.size() != in.cols) throw StructuralError("layer_norm shape mismatch");
  const std::size_t h = in.cols;
  Matrix out(in.rows, h);
  auto xhat = std::make_shared<Matrix>(in.rows, h);
  auto inv_std = std::make_shared<std::vector<double>>(in.rows);
  for (std::size_t i = 0; i < in.rows; ++i) {
    const auto row = in.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(h);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < h; ++j) {
      const double xh = (row[j] - mean) * is;
      (*xhat)(i, j) = xh;
      out(i, j) = g.value[j] * xh + b.value[j];
    }
  }
  const Node n = values_.size();
  if (!recording()) {
    xhat.reset();
    inv_std.reset();
  }
  return push(std::move(out), [this, n, x, gamma, beta, xhat, inv_std] {
    if (!has_grad(n)) return;
    const Matrix& dy = grads_of_nodes_[n];
    const Parameter& g = params_[gamma];
    auto& dg = (*grads_)[gamma];
    auto& db = (*grads_)[beta];
    Matrix& dx = grad(x);
    const std::size_t h = dy.cols;
    std::vector<double> dxh(h);
    for (std::size_t i = 0; i < dy.rows; ++i) {
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        const double d = dy(i, j);
        const double xh = (*xhat)(i, j);
        dg[j] += d * xh;
        db[j] += d;
        dxh[j] = d * g.value[j];
        mean_d += dxh[j];
        mean_dx += dxh[j] * xh;
      }
      mean_d /= static_cast<double>(h);
      mean_dx /= static_cast<double>(h);
      for (std::size_t j = 0; j < h; ++j) {
        dx(i, j) += (*inv_std)[i] * (dxh[j] - mean_d - (*xhat)(i, j) * mean_dx);
      }
    }
  });
}

Tape::Node Tape::gelu(Node x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Matrix& in = values_[x];
  Matrix out(in.rows, in.cols);
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    const double v = in.data[i];
    out.data[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  const Node n = values_.size();
  return push(std::move(out), [this, n, x] {
    if (!has_grad(n)) return;
    const Matrix& g = grads_of_nodes_[n];
    const Matrix& in = values_[x];
    Matrix& gx = grad(x);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const double v = in.data[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      gx.data[i] += g.data[i] * d;
    }
  });
}

Tape::Node Tape::attention(Node q, Node k, Node v, std::size_t heads, bool causal) {
  const std::size_t lq = values_[q].rows, lk = values_[k].rows;
  if (causal && lq != lk) throw StructuralError("causal attention needs Lq == Lk");
  std::vector<KeyRange> ranges(lq);
  for (std::size_t i = 0; i < lq; ++i) ranges[i] = {0, causal ? i + 1 : lk};
  return attention(q, k, v, heads, ranges);
}

Tape::Node Tape::attention(Node q, Node k, Node v, std::size_t heads, std::span<const KeyRange> visible_keys) {
  const Matrix& Q = values_[q];
  const Matrix& K = values_[k];
  const Matrix& V = values_[v];
  if (Q.cols != K.cols || K.cols != V.cols || K.rows != V.rows || heads == 0 ||
      Q.cols % heads != 0) {
    throw StructuralError("attention shape mismatch");
  }
  if (visible_keys.size() != Q.rows) throw StructuralError("attention needs one key range per query");
  for (const auto& [lo, hi] : visible_keys) {
    if (lo > hi || hi > K.rows) throw StructuralError("attention key range out of bounds");
  }
  auto ranges = std::make_shared<std::vector<KeyRange>>(visible_keys.begin(), visible_keys.end());
  const std::size_t lq = Q.rows, lk = K.rows, hidden = Q.cols, dh = hidden / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(lq, hidden);
  // Attention probabilities per head, (heads * lq) x lk.
  auto probs = std::make_shared<Matrix>(heads * lq, lk);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < lq; ++i) {
      double* p = probs->data.data() + (h * lq + i) * lk;
      // An empty range leaves the output row at zero.
      const auto [lo, hi] = (*ranges)[i];
      double mx = -1e300;
      for (std::size_t j = lo; j < hi; ++j) {
        p[j] = scale * dot(Q.data.data() + i * hidden + off, K.data.data() + j * hidden + off, dh);
        mx = std::max(mx, p[j]);
      }
      double sum = 0.0;
      for (std::size_t j = lo; j < hi; ++j) {
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
      }
      for (std::size_t j = lo; j < hi; ++j) p[j] /= sum;
      double* o = out.data.data() + i * hidden + off;
      for (std::size_t j = lo; j < hi; ++j) {
        const double pj = p[j];
        const double* vr = V.data.data() + j * hidden + off;
        for (std::size_t d = 0; d < dh; ++d) o[d] += pj * vr[d];
      }
    }
  }
  const Node n = values_.size();
  if (!recording()) probs.reset();
  return push(std::move(out), [this, n, q, k, v, heads, ranges, probs, scale] {
    if (!has_grad(n)) return;
    const Matrix& dO = grads_of_nodes_[n];
    const Matrix& Q = values_[q];
    const Matrix& K = values_[k];
    const Matrix& V = values_[v];
    Matrix& dQ = grad(q);
    Matrix& dK = grad(k);
    Matrix& dV = grad(v);
    const std::size_t lq = Q.rows, lk = K.rows, hidden = Q.cols, dh = hidden / heads;
    std::vector<double> dp(lk);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < lq; ++i) {
        const double* p = probs->data.data() + (h * lq + i) * lk;
        const double* dor = dO.data.data() + i * hidden + off;
        const auto [lo, hi] = (*ranges)[i];
        double row_dot = 0.0;
        for (std::size_t j = lo; j < hi; ++j) {
          dp[j] = dot(dor, V.data.data() + j * hidden + off, dh);
          row_dot += dp[j] * p[j];
          double* dvr = dV.data.data() + j * hidden + off;
          for (std::size_t d = 0; d < dh; ++d) dvr[d] += p[j] * dor[d];
        }
        double* dqr = dQ.data.data() + i * hidden + off;
        const double* qr = Q.data.data() + i * hidden + off;
        for (std::size_t j = lo; j < hi; ++j) {
          const double ds = p[j] * (dp[j] - row_dot) * scale;
          if (ds == 0.0) continue;
          const double* kr = K.data.data() + j * hidden + off;
          double* dkr = dK.data.data() + j * hidden + off;
          for (std::size_t d = 0; d < dh; ++d) {
            dqr[d] += ds * kr[d];
            dkr[d] += ds * qr[d];
          }
        }
      }
    }
  });
}

Tape::Node Tape::dropout(Node x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  const Matrix& in = values_[x];
  Matrix out(in.rows, in.cols);
  auto mask = std::make_shared<std::vector<double>>(in.data.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out.data[i] = in.data[i] * (*mask)[i];
  }
  const Node n = values_.size();
  return push(std::move(out), [this, n, x, mask] {
    if (!has_grad(n)) return;
    const Matrix& g = grads_of_nodes_[n];
    Matrix& gx = grad(x);
    for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * (*mask)[i];
  });
}

Tape::Node Tape::softmax_cross_entropy(Node logits, std::span<const std::size_t> rows,
                                       std::span<const int> targets) {
  if (rows.size() != targets.size()) throw StructuralError("cross-entropy rows/targets mismatch");
  const Matrix& z = values_[logits];
  double loss = 0.0;
  auto soft = std::make_shared<Matrix>(rows.size(), z.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= z.rows || targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= z.cols) {
      throw StructuralError("cross-entropy index out of range");
    }
    const auto zr = z.row(rows[r]);
    const double mx = *std::max_element(zr.begin(), zr.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < z.cols; ++j) {
      (*soft)(r, j) = std::exp(zr[j] - mx);
      sum += (*soft)(r, j);
    }
    for (std::size_t j = 0; j < z.cols; ++j) (*soft)(r, j) /= sum;
    loss += std::log(sum) + mx - zr[static_cast<std::size_t>(targets[r])];
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  std::vector<std::size_t> saved_rows(rows.begin(), rows.end());
  std::vector<int> saved_targets(targets.begin(), targets.end());
  const Node n = values_.size();
  return push(std::move(out), [this, n, logits, soft, saved_rows = std::move(saved_rows),
                               saved_targets = std::move(saved_targets)] {
    if (!has_grad(n)) return;
    const double g = grads_of_nodes_[n](0, 0);
    Matrix& dz = grad(logits);
    for (std::size_t r = 0; r < saved_rows.size(); ++r) {
      auto row = dz.row(saved_rows[r]);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += g * (*soft)(r, j);
      row[static_cast<std::size_t>(saved_targets[r])] -= g;
    }
  });
}

Tape::Node Tape::sigmoid_bce(Node logits, std::span<const double> targets,
                             std::span<const double> weights) {
  const Matrix& z = values_[logits];
  if (z.cols != 1 || targets.size() != z.rows || weights.size() != z.rows) {
    throw StructuralError("sigmoid_bce shape mismatch");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows; ++i) {
    if (weights[i] == 0.0) continue;
    loss += weights[i] * (softplus(z.data[i]) - targets[i] * z.data[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  std::vector<double> t(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  const Node n = values_.size();
  return push(std::move(out), [this, n, logits, t = std::move(t), w = std::move(w)] {
    if (!has_grad(n)) return;
    const double g = grads_of_nodes_[n](0, 0);
    const Matrix& z = values_[logits];
    Matrix& dz = grad(logits);
    for (std::size_t i = 0; i < z.rows; ++i) {
      if (w[i] == 0.0) continue;
      dz.data[i] += g * w[i] * (sigmoid(z.data[i]) - t[i]);
    }
  });
}

void Tape::backward(Node loss) {
  if (!recording()) throw StateError("backward on a tape that did not record a forward pass");
  if (consumed_) throw StateError("backward already run on this tape");
  if (loss >= values_.size()) throw StateError("backward without a forward pass");
  if (values_[loss].rows != 1 || values_[loss].cols != 1) {
    throw StructuralError("backward needs a scalar loss");
  }
  consumed_ = true;
  grad(loss)(0, 0) = 1.0;
  for (std::size_t i = loss + 1; i-- > 0;) {
    if (backward_[i] && has_grad(i)) backward_[i]();
  }
}

}  // namespace rtd::nn

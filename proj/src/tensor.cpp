#include "mft/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "mft/error.hpp"
#include "mft/rng.hpp"

namespace mft {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<Mat>;
using CMapMat = Eigen::Map<const Mat>;
using Strided = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
using CStrided = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

MapMat as_matrix(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
CMapMat as_matrix(const Tensor& t) {
  return CMapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const Var& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_rule = std::move(rule);
  }
  return node;
}

// Gradient buffer of a parent, or nullptr when the parent is frozen.
Tensor* grad_of(Node& self, std::size_t i) {
  Node& parent = *self.parents[i];
  if (!parent.requires_grad) return nullptr;
  parent.ensure_grad();
  return &parent.grad;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::Dimension, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
  }
}

std::size_t active_count(std::span<const std::uint8_t> mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    fail(ErrorKind::Dimension, "tensor shape " + shape_str(shape_) + " does not match " +
                                   std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::normal(Shape shape, double sigma, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values_) v = sigma * rng.normal();
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) fail(ErrorKind::Rank, "axis out of range for shape " + shape_str(shape_));
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (values_.size() != 1) fail(ErrorKind::Rank, "item() on tensor of shape " + shape_str(shape_));
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    fail(ErrorKind::Dimension, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

void Node::ensure_grad() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return node;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& loss, const BackwardOptions& options) {
  if (loss->value.size() != 1) {
    fail(ErrorKind::Rank, "backward needs a scalar root, got shape " + shape_str(loss->value.shape()));
  }
  if (!loss->requires_grad) return;

  std::optional<Rng> rng;
  if (options.shuffle_seed) rng.emplace(*options.shuffle_seed);

  // Iterative post-order DFS; reversing it visits every consumer before its producers.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::vector<Node*> pending;
  };
  std::vector<Frame> stack;
  auto push = [&](Node* n) {
    visited.insert(n);
    Frame frame{n, {}};
    for (auto& p : n->parents) {
      if (p->requires_grad) frame.pending.push_back(p.get());
    }
    if (rng) rng->shuffle(frame.pending);
    stack.push_back(std::move(frame));
  };
  push(loss.get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.pending.empty()) {
      order.push_back(top.node);
      stack.pop_back();
      continue;
    }
    Node* next = top.pending.back();
    top.pending.pop_back();
    if (!visited.count(next)) push(next);
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = Tensor(n->value.shape(), 0.0);
    else n->ensure_grad();
  }
  loss->grad.fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_rule) n->backward_rule(*n);
  }
}

namespace ops {

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() < 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    fail(ErrorKind::Dimension, "matmul: shape mismatch " + shape_str(av.shape()) + " * " + shape_str(bv.shape()));
  }
  Shape out_shape = av.shape();
  out_shape.back() = bv.cols();
  Tensor out(out_shape);
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& a_val = self.parents[0]->value;
    const Tensor& b_val = self.parents[1]->value;
    if (Tensor* ga = grad_of(self, 0)) {
      as_matrix(*ga).noalias() += as_matrix(self.grad) * as_matrix(b_val).transpose();
    }
    if (Tensor* gb = grad_of(self, 1)) {
      as_matrix(*gb).noalias() += as_matrix(a_val).transpose() * as_matrix(self.grad);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t n = x->value.cols();
  if (bias->value.size() != n || bias->value.rank() != 1) {
    fail(ErrorKind::Dimension, "add_bias: bias " + shape_str(bias->value.shape()) + " for input " +
                                   shape_str(x->value.shape()));
  }
  Tensor out = x->value;
  const std::size_t rows = out.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) += bias->value[c];
  }
  return make_result(std::move(out), {x, bias}, [](Node& self) {
    if (Tensor* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    }
    if (Tensor* gb = grad_of(self, 1)) {
      const std::size_t cols = self.grad.cols();
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += self.grad.at(r, c);
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) { return add_bias(matmul(x, weight), bias); }

Var scale(const Var& x, double factor) {
  Tensor out = x->value;
  for (auto& v : out.values()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * self.grad[i];
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x->value.values()) total += v;
  return make_result(Tensor::scalar(total), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const double upstream = self.grad[0];
      for (auto& v : g->values()) v += upstream;
    }
  });
}

Var mean_of(const std::vector<Var>& scalars) {
  if (scalars.empty()) fail(ErrorKind::Dimension, "mean_of: no inputs");
  double total = 0.0;
  for (const auto& s : scalars) {
    if (s->value.size() != 1) fail(ErrorKind::Rank, "mean_of: non-scalar input " + shape_str(s->value.shape()));
    total += s->value[0];
  }
  const double n = static_cast<double>(scalars.size());
  return make_result(Tensor::scalar(total / n), scalars, [n](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (Tensor* g = grad_of(self, p)) (*g)[0] += self.grad[0] / n;
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var gelu(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const Tensor& in = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double v = in[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        (*g)[i] += self.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

Var tanh(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = std::tanh(v);
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    }
  });
}

Var softmax_rows(const Var& x) {
  Tensor out = x->value;
  const std::size_t rows = out.rows();
  const std::size_t cols = out.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    const double peak = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - peak);
      total += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const std::size_t cols = self.value.cols();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g->at(r, c) += y[c] * (dy[c] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = x->value.cols();
  if (gain->value.size() != n || bias->value.size() != n) {
    fail(ErrorKind::Dimension, "layer_norm: parameters do not match input " + shape_str(x->value.shape()));
  }
  const std::size_t rows = x->value.rows();
  Tensor out(x->value.shape());
  auto normalized = std::make_shared<Tensor>(x->value.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x->value.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += in[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < n; ++c) {
      const double xhat = (in[c] - mu) * inv;
      normalized->at(r, c) = xhat;
      out.at(r, c) = gain->value[c] * xhat + bias->value[c];
    }
  }
  return make_result(std::move(out), {x, gain, bias}, [normalized, inv_std](Node& self) {
    const std::size_t cols = self.value.cols();
    const std::size_t rows = self.value.rows();
    const Tensor& gain_val = self.parents[1]->value;
    if (Tensor* gg = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gg)[c] += self.grad.at(r, c) * normalized->at(r, c);
    }
    if (Tensor* gb = grad_of(self, 2)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += self.grad.at(r, c);
    }
    if (Tensor* gx = grad_of(self, 0)) {
      const double n = static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double sum_d = 0.0;
        double sum_dx = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = self.grad.at(r, c) * gain_val[c];
          sum_d += d;
          sum_dx += d * normalized->at(r, c);
        }
        const double inv = (*inv_std)[r];
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = self.grad.at(r, c) * gain_val[c];
          gx->at(r, c) += inv / n * (n * d - sum_d - normalized->at(r, c) * sum_dx);
        }
      }
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids, Shape out_leading) {
  const Tensor& tv = table->value;
  if (tv.rank() != 2) fail(ErrorKind::Rank, "embedding table must be rank 2, got " + shape_str(tv.shape()));
  if (shape_size(out_leading) != ids.size()) {
    fail(ErrorKind::Dimension, "embedding: " + std::to_string(ids.size()) + " ids for leading shape " +
                                   shape_str(out_leading));
  }
  const std::size_t vocab = tv.rows();
  const std::size_t d = tv.cols();
  Shape out_shape = std::move(out_leading);
  out_shape.push_back(d);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      fail(ErrorKind::Index, "embedding id " + std::to_string(ids[i]) + " outside table of " +
                                 std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> kept(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [kept = std::move(kept), d](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      double* dst = g->data() + static_cast<std::size_t>(kept[i]) * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) { return embedding(table, ids, Shape{ids.size()}); }

Var masked_mean_pool(const Var& x, std::span<const std::uint8_t> mask) {
  const Tensor& xv = x->value;
  if (xv.rank() != 2 || xv.rows() != mask.size()) {
    fail(ErrorKind::Dimension, "masked_mean_pool: input " + shape_str(xv.shape()) + " with mask of length " +
                                   std::to_string(mask.size()));
  }
  const std::size_t active = active_count(mask);
  if (active == 0) fail(ErrorKind::EmptyPool, "masked_mean_pool: mask has no active position");
  const std::size_t d = xv.cols();
  Tensor out(Shape{d});
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    for (std::size_t c = 0; c < d; ++c) out[c] += xv.at(t, c);
  }
  const double inv = 1.0 / static_cast<double>(active);
  for (auto& v : out.values()) v *= inv;
  std::vector<std::uint8_t> kept(mask.begin(), mask.end());
  return make_result(std::move(out), {x}, [kept = std::move(kept), inv, d](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t t = 0; t < kept.size(); ++t) {
      if (!kept[t]) continue;
      for (std::size_t c = 0; c < d; ++c) g->at(t, c) += inv * self.grad[c];
    }
  });
}

Var masked_mean_pool_batched(const Var& x, std::span<const std::uint8_t> mask) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3 || xv.extent(0) * xv.extent(1) != mask.size()) {
    fail(ErrorKind::Dimension, "masked_mean_pool_batched: input " + shape_str(xv.shape()) +
                                   " with mask of length " + std::to_string(mask.size()));
  }
  const std::size_t batch = xv.extent(0);
  const std::size_t seq = xv.extent(1);
  const std::size_t d = xv.extent(2);
  Tensor out(Shape{batch, d});
  std::vector<double> inv(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t active = active_count(mask.subspan(b * seq, seq));
    if (active == 0) {
      fail(ErrorKind::EmptyPool, "masked_mean_pool_batched: sequence " + std::to_string(b) + " has no active position");
    }
    inv[b] = 1.0 / static_cast<double>(active);
    for (std::size_t t = 0; t < seq; ++t) {
      if (!mask[b * seq + t]) continue;
      const double* row = xv.data() + (b * seq + t) * d;
      for (std::size_t c = 0; c < d; ++c) out.at(b, c) += row[c];
    }
    for (std::size_t c = 0; c < d; ++c) out.at(b, c) *= inv[b];
  }
  std::vector<std::uint8_t> kept(mask.begin(), mask.end());
  return make_result(std::move(out), {x}, [kept = std::move(kept), inv = std::move(inv), seq, d](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < inv.size(); ++b) {
      for (std::size_t t = 0; t < seq; ++t) {
        if (!kept[b * seq + t]) continue;
        double* dst = g->data() + (b * seq + t) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += inv[b] * self.grad.at(b, c);
      }
    }
  });
}

Var select_position(const Var& x, std::size_t position) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3 || position >= xv.extent(1)) {
    fail(ErrorKind::Index, "select_position " + std::to_string(position) + " on " + shape_str(xv.shape()));
  }
  const std::size_t batch = xv.extent(0);
  const std::size_t seq = xv.extent(1);
  const std::size_t d = xv.extent(2);
  Tensor out(Shape{batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(xv.data() + (b * seq + position) * d, d, out.data() + b * d);
  }
  return make_result(std::move(out), {x}, [position, seq, d](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < self.value.rows(); ++b) {
      double* dst = g->data() + (b * seq + position) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += self.grad.at(b, c);
    }
  });
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::span<const std::uint8_t> mask,
                         std::size_t num_heads) {
  const Tensor& qv = q->value;
  require_same_shape(qv, k->value, "attention");
  require_same_shape(qv, v->value, "attention");
  if (qv.rank() != 3 || qv.extent(0) * qv.extent(1) != mask.size()) {
    fail(ErrorKind::Dimension, "attention: input " + shape_str(qv.shape()) + " with mask of length " +
                                   std::to_string(mask.size()));
  }
  const std::size_t batch = qv.extent(0);
  const std::size_t seq = qv.extent(1);
  const std::size_t d = qv.extent(2);
  if (num_heads == 0 || d % num_heads != 0) {
    fail(ErrorKind::Dimension, "attention: d=" + std::to_string(d) + " not divisible by heads=" + std::to_string(num_heads));
  }
  const std::size_t dh = d / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto T = static_cast<Eigen::Index>(seq);
  const auto DH = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  // probabilities[(b * H + h)] is a T x T row-major block
  auto probs = std::make_shared<std::vector<double>>(batch * num_heads * seq * seq, 0.0);
  Tensor out(qv.shape());
  Mat scores(T, T);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* m = mask.data() + b * seq;
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t offset = b * seq * d + h * dh;
      CStrided Q(qv.data() + offset, T, DH, stride);
      CStrided K(k->value.data() + offset, T, DH, stride);
      CStrided V(v->value.data() + offset, T, DH, stride);
      scores.noalias() = Q * K.transpose();
      MapMat P(probs->data() + (b * num_heads + h) * seq * seq, T, T);
      for (std::size_t i = 0; i < seq; ++i) {
        if (!m[i]) continue;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          if (m[j]) peak = std::max(peak, scores(i, j) * inv_sqrt);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!m[j]) continue;
          const double e = std::exp(scores(i, j) * inv_sqrt - peak);
          P(i, j) = e;
          total += e;
        }
        for (std::size_t j = 0; j < seq; ++j) {
          if (m[j]) P(i, j) /= total;
        }
      }
      Strided O(out.data() + offset, T, DH, stride);
      O.noalias() = P * V;
    }
  }
  return make_result(std::move(out), {q, k, v},
                     [probs, batch, seq, d, num_heads, dh, inv_sqrt](Node& self) {
    Tensor* gq = grad_of(self, 0);
    Tensor* gk = grad_of(self, 1);
    Tensor* gv = grad_of(self, 2);
    const Tensor& qv = self.parents[0]->value;
    const Tensor& kv = self.parents[1]->value;
    const Tensor& vv = self.parents[2]->value;
    const auto T = static_cast<Eigen::Index>(seq);
    const auto DH = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
    Mat dP(T, T);
    Mat dS(T, T);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < num_heads; ++h) {
        const std::size_t offset = b * seq * d + h * dh;
        CMapMat P(probs->data() + (b * num_heads + h) * seq * seq, T, T);
        CStrided dO(self.grad.data() + offset, T, DH, stride);
        CStrided V(vv.data() + offset, T, DH, stride);
        if (gv) {
          Strided dV(gv->data() + offset, T, DH, stride);
          dV.noalias() += P.transpose() * dO;
        }
        if (!gq && !gk) continue;
        dP.noalias() = dO * V.transpose();
        const Eigen::VectorXd row_dot = (dP.array() * P.array()).rowwise().sum();
        dS = (P.array() * (dP.array().colwise() - row_dot.array())).matrix() * inv_sqrt;
        if (gq) {
          CStrided K(kv.data() + offset, T, DH, stride);
          Strided dQ(gq->data() + offset, T, DH, stride);
          dQ.noalias() += dS * K;
        }
        if (gk) {
          CStrided Q(qv.data() + offset, T, DH, stride);
          Strided dK(gk->data() + offset, T, DH, stride);
          dK.noalias() += dS.transpose() * Q;
        }
      }
    }
  });
}

Var weighted_cross_entropy(const Var& logits, std::span<const int> targets, std::span<const double> weights) {
  const Tensor& lv = logits->value;
  const std::size_t batch = lv.rows();
  const std::size_t classes = lv.cols();
  if (lv.rank() != 2 || targets.size() != batch || weights.size() != batch) {
    fail(ErrorKind::Dimension, "weighted_cross_entropy: logits " + shape_str(lv.shape()) + " with " +
                                   std::to_string(targets.size()) + " targets and " +
                                   std::to_string(weights.size()) + " weights");
  }
  auto probs = std::make_shared<Tensor>(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes) {
      fail(ErrorKind::Index, "weighted_cross_entropy: target " + std::to_string(targets[r]) + " outside [0," +
                                 std::to_string(classes) + ")");
    }
    if (!(weights[r] >= 0.0)) fail(ErrorKind::Configuration, "weighted_cross_entropy: negative weight");
    const double* row = lv.data() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - peak);
    const double log_z = peak + std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) probs->at(r, c) = std::exp(row[c] - log_z);
    total += weights[r] * (row[targets[r]] - log_z);
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  std::vector<int> kept_targets(targets.begin(), targets.end());
  std::vector<double> kept_weights(weights.begin(), weights.end());
  return make_result(Tensor::scalar(-total * inv_batch), {logits},
                     [probs, kept_targets = std::move(kept_targets), kept_weights = std::move(kept_weights),
                      inv_batch](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const double upstream = self.grad[0];
    const std::size_t classes = probs->cols();
    for (std::size_t r = 0; r < kept_targets.size(); ++r) {
      const double w = kept_weights[r] * inv_batch * upstream;
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < classes; ++c) {
        const double onehot = static_cast<int>(c) == kept_targets[r] ? 1.0 : 0.0;
        g->at(r, c) += w * (probs->at(r, c) - onehot);
      }
    }
  });
}

Var binary_cross_entropy_with_logits(const Var& logits, std::span<const double> targets) {
  const Tensor& lv = logits->value;
  if (lv.size() != targets.size() || lv.cols() != (lv.rank() == 1 ? targets.size() : 1)) {
    fail(ErrorKind::Dimension, "binary_cross_entropy: logits " + shape_str(lv.shape()) + " with " +
                                   std::to_string(targets.size()) + " targets");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double x = lv[i];
    const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    total += softplus - targets[i] * x;
  }
  const double inv_batch = 1.0 / static_cast<double>(targets.size());
  std::vector<double> kept(targets.begin(), targets.end());
  return make_result(Tensor::scalar(total * inv_batch), {logits}, [kept = std::move(kept), inv_batch](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const Tensor& lv = self.parents[0]->value;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const double sigma = 1.0 / (1.0 + std::exp(-lv[i]));
      (*g)[i] += self.grad[0] * inv_batch * (sigma - kept[i]);
    }
  });
}

Var gradient_reversal(const Var& x, double factor) {
  return make_result(x->value, {x}, [factor](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= factor * self.grad[i];
    }
  });
}

}  // namespace ops

}  // namespace mft

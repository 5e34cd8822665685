#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mft {

class Rng;

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array of doubles. A tensor of any rank can be viewed as a
// matrix whose rows fold every leading axis and whose columns are the last
// axis; the encoder keeps [B, T, d] activations and feeds them to matrix
// kernels through that view.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  static Tensor normal(Shape shape, double sigma, Rng& rng);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t row, std::size_t col) { return values_[row * cols() + col]; }
  double at(std::size_t row, std::size_t col) const { return values_[row * cols() + col]; }

  double item() const;
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  void fill(double value);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// One vertex of the reverse-mode graph. The backward rule reads this node's
// gradient and accumulates into its parents' gradients.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_rule;

  bool is_leaf() const noexcept { return parents.empty(); }
  void ensure_grad();
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);

bool grad_enabled() noexcept;

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct BackwardOptions {
  // When set, the traversal order among fan-out edges is randomized with
  // this seed; results must agree with the default order up to rounding.
  std::optional<std::uint64_t> shuffle_seed;
};

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// loss. Leaves not on the path keep whatever grad they had (zero after
// zero_grad). Intermediate gradients are reset on every call.
void backward(const Var& loss, const BackwardOptions& options = {});

namespace ops {

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& bias);
Var linear(const Var& x, const Var& weight, const Var& bias);
Var scale(const Var& x, double factor);
Var sum(const Var& x);
Var mean_of(const std::vector<Var>& scalars);
Var reshape(const Var& x, Shape shape);

Var gelu(const Var& x);
Var tanh(const Var& x);
Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-12);

// Rows of table selected by ids; the output shape is out_leading + [d].
Var embedding(const Var& table, std::span<const int> ids, Shape out_leading);
Var gather_rows(const Var& table, std::span<const int> ids);

// x is [T, d]; averages the rows whose mask entry is nonzero.
Var masked_mean_pool(const Var& x, std::span<const std::uint8_t> mask);
// x is [B, T, d]; mask is B*T row-major. Returns [B, d].
Var masked_mean_pool_batched(const Var& x, std::span<const std::uint8_t> mask);
// x is [B, T, d]; returns the [B, d] slice at one sequence position.
Var select_position(const Var& x, std::size_t position);

// Scaled dot-product self-attention over [B, T, d] projections split into
// num_heads heads. Keys with mask 0 receive no weight; query rows with mask 0
// produce zeros.
Var multi_head_attention(const Var& q, const Var& k, const Var& v,
                         std::span<const std::uint8_t> mask, std::size_t num_heads);

// -(1/B) * sum_i w_i * log softmax(logits_i)[target_i]
Var weighted_cross_entropy(const Var& logits, std::span<const int> targets,
                           std::span<const double> weights);

// -(1/B) * sum_i (y_i log s(x_i) + (1 - y_i) log(1 - s(x_i))) with s the
// logistic function; logits are [B] or [B, 1].
Var binary_cross_entropy_with_logits(const Var& logits, std::span<const double> targets);

// Identity forward; backward multiplies the incoming gradient by -factor.
Var gradient_reversal(const Var& x, double factor = 1.0);

}  // namespace ops

}  // namespace mft

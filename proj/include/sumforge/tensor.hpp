#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a handle onto a shared node; copying a Tensor aliases it. Ops
// record their inputs and a backward closure only when gradient recording is
// enabled and at least one input requires a gradient.
namespace sumforge {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (!has_grad) {
      grad.assign(data.size(), Scalar(0));
      has_grad = true;
    }
  }
};

}  // namespace detail

bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using Node = detail::Node<Scalar>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) noexcept : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  /// Row-major copy of an Eigen matrix as a rank-2 tensor.
  static Tensor from_matrix(const RowMatrix& m, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  /// Axis length; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const noexcept { return node_->data.size(); }

  std::span<const Scalar> data() const noexcept { return node_->data; }
  /// Writable storage. Only meaningful for leaves (parameters, inputs).
  std::span<Scalar> mutable_data() noexcept { return node_->data; }
  Scalar item() const;
  Scalar at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool value) noexcept { node_->requires_grad = value; }
  bool has_grad() const noexcept { return node_->has_grad; }
  /// Empty span until a backward pass reached this tensor.
  std::span<const Scalar> grad() const noexcept;
  std::span<Scalar> mutable_grad();
  void zero_grad() noexcept;

  /// Rank-2 view of the data.
  Eigen::Map<const RowMatrix> matrix() const;

  /// Copy of the data with no graph attached.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// -- Linear algebra ---------------------------------------------------------

/// a[..., m, k] x b[..., k, n] with identical leading axes, or b[k, n] shared
/// across all leading axes of a.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Swaps the last two axes.
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<std::size_t>& axes);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis);

// -- Elementwise (b broadcasts when its shape is a suffix of a's, or vice versa)

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);
/// Tanh approximation.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

/// Inverted dropout: kept entries are scaled by 1/(1-p). Identity when
/// `train` is false or p == 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, bool train, std::uint64_t seed);

/// Entries whose mask byte is non-zero become `value`. Mask has x's numel.
template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& x, std::span<const std::uint8_t> mask, Scalar value);

// -- Indexing -----------------------------------------------------------------

/// table[V, d] rows selected by ids; result shape is ids_shape + [d].
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const std::int32_t> ids,
                                Shape ids_shape);

/// x[B, L, d] -> [B, S, d] picking x[b, positions[b * S + s]].
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::span<const std::int32_t> positions,
                           std::size_t per_batch);

// -- Normalization and reductions ---------------------------------------------

/// exp(x - max) normalized along `axis`. A slice that is entirely -inf
/// yields zeros.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis);
template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps = 1e-6);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x);

// -- Losses -------------------------------------------------------------------

/// Weighted mean BCE of probabilities against 0/1 targets.
template <typename Scalar>
Tensor<Scalar> binary_cross_entropy(const Tensor<Scalar>& probs, std::span<const Scalar> targets,
                                    std::span<const Scalar> weights);

/// Weighted mean of -(1-s) log p[target] - (s/V) sum_v log p[v] over rows of
/// logits[..., V].
template <typename Scalar>
Tensor<Scalar> smoothed_cross_entropy(const Tensor<Scalar>& logits,
                                      std::span<const std::int32_t> targets,
                                      std::span<const Scalar> weights, double smoothing);

// -- Differentiation ----------------------------------------------------------

/// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls;
/// intermediate gradients are released after use.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

/// Central differences against the analytic gradient of `loss_fn` with respect
/// to `params`. Returns max |numeric - analytic| / max(1, |analytic|).
template <typename Scalar>
double finite_diff_check(const std::function<Tensor<Scalar>()>& loss_fn,
                         std::span<Tensor<Scalar>> params, double eps = 1e-5);

}  // namespace sumforge

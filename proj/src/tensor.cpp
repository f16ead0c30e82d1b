#include "sumforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "sumforge/error.hpp"
#include "sumforge/rng.hpp"

namespace sumforge {

std::size_t numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (sumforge::numel(shape) != data.size())
    throw Error(Errc::ShapeMismatch, "shape " + shape_string(shape) + " does not hold " +
                                         std::to_string(data.size()) + " values");
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  const std::size_t n = sumforge::numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<Scalar>{value}, requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_matrix(const RowMatrix& m, bool requires_grad) {
  std::vector<Scalar> data(m.data(), m.data() + m.size());
  return Tensor(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(data), requires_grad);
}

template <typename Scalar>
std::size_t Tensor<Scalar>::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw Error(Errc::InvalidAxis, std::to_string(axis));
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw Error(Errc::NotScalar, "item() on shape " + shape_string(shape()));
  return node_->data[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw Error(Errc::IndexOutOfRange, "index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw Error(Errc::IndexOutOfRange, std::to_string(i));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

template <typename Scalar>
std::span<const Scalar> Tensor<Scalar>::grad() const noexcept {
  if (!node_->has_grad) return {};
  return node_->grad;
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() noexcept {
  if (node_->has_grad) std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
}

template <typename Scalar>
Eigen::Map<const typename Tensor<Scalar>::RowMatrix> Tensor<Scalar>::matrix() const {
  if (rank() != 2) throw Error(Errc::ShapeMismatch, "matrix() needs rank 2, got " + shape_string(shape()));
  return Eigen::Map<const RowMatrix>(node_->data.data(), static_cast<Eigen::Index>(shape()[0]),
                                     static_cast<Eigen::Index>(shape()[1]));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

// ---------------------------------------------------------------------------
// Op plumbing

namespace {

template <typename Scalar>
using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

template <typename Scalar>
using BackwardFn = std::function<void(detail::Node<Scalar>&)>;

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, std::vector<Scalar> data,
                           std::initializer_list<const Tensor<Scalar>*> inputs,
                           BackwardFn<Scalar> fn) {
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor<Scalar>* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor<Scalar>* t : inputs) node->parents.push_back(t->node());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, std::vector<Scalar> data,
                           const std::vector<Tensor<Scalar>>& inputs, BackwardFn<Scalar> fn) {
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor<Scalar>(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
template <typename Scalar>
Scalar* parent_grad(detail::Node<Scalar>& self, std::size_t i) {
  detail::Node<Scalar>& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw Error(Errc::InvalidAxis, std::to_string(axis) + " for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapC = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using MapM = Eigen::Map<RowMatrix<Scalar>>;

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw Error(Errc::ShapeMismatch, "matmul needs rank >= 2: " + shape_string(a.shape()) + " x " +
                                         shape_string(b.shape()));
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != k)
    throw Error(Errc::ShapeMismatch, shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
      throw Error(Errc::ShapeMismatch, shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<Scalar> out(numel(out_shape));

  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  if (shared_b) {
    const std::size_t rows = a.numel() / k;
    MapM<Scalar>(out.data(), ei(rows), ei(n)).noalias() =
        MapC<Scalar>(a.data().data(), ei(rows), ei(k)) * MapC<Scalar>(b.data().data(), ei(k), ei(n));
  } else {
    const std::size_t batches = a.numel() / (m * k);
    for (std::size_t i = 0; i < batches; ++i) {
      MapM<Scalar>(out.data() + i * m * n, ei(m), ei(n)).noalias() =
          MapC<Scalar>(a.data().data() + i * m * k, ei(m), ei(k)) *
          MapC<Scalar>(b.data().data() + i * k * n, ei(k), ei(n));
    }
  }

  return make_result<Scalar>(std::move(out_shape), std::move(out), {&a, &b},
      [m, k, n, shared_b, ei](detail::Node<Scalar>& self) {
        const auto& A = self.parents[0]->data;
        const auto& B = self.parents[1]->data;
        Scalar* ga = parent_grad(self, 0);
        Scalar* gb = parent_grad(self, 1);
        const Scalar* g = self.grad.data();
        if (shared_b) {
          const std::size_t rows = A.size() / k;
          MapC<Scalar> dC(g, ei(rows), ei(n));
          if (ga) MapM<Scalar>(ga, ei(rows), ei(k)).noalias() += dC * MapC<Scalar>(B.data(), ei(k), ei(n)).transpose();
          if (gb) MapM<Scalar>(gb, ei(k), ei(n)).noalias() += MapC<Scalar>(A.data(), ei(rows), ei(k)).transpose() * dC;
          return;
        }
        const std::size_t batches = A.size() / (m * k);
        for (std::size_t i = 0; i < batches; ++i) {
          MapC<Scalar> dC(g + i * m * n, ei(m), ei(n));
          if (ga)
            MapM<Scalar>(ga + i * m * k, ei(m), ei(k)).noalias() +=
                dC * MapC<Scalar>(B.data() + i * k * n, ei(k), ei(n)).transpose();
          if (gb)
            MapM<Scalar>(gb + i * k * n, ei(k), ei(n)).noalias() +=
                MapC<Scalar>(A.data() + i * m * k, ei(m), ei(k)).transpose() * dC;
        }
      });
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw Error(Errc::InvalidAxis, "permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (std::size_t ax : axes) {
    if (ax >= r || seen[ax]) throw Error(Errc::InvalidAxis, "not a permutation");
    seen[ax] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  const std::size_t total = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    (*source)[flat] = offset;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      offset += strides[d];
      if (idx[d] < out_shape[d]) break;
      offset -= strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  std::vector<Scalar> out(total);
  const auto in = x.data();
  for (std::size_t i = 0; i < total; ++i) out[i] = in[(*source)[i]];
  return make_result<Scalar>(std::move(out_shape), std::move(out), {&x},
      [source](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < source->size(); ++i) gx[(*source)[i]] += self.grad[i];
      });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  if (x.rank() < 2) throw Error(Errc::InvalidAxis, "transpose needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw Error(Errc::ShapeMismatch, "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  return make_result<Scalar>(std::move(shape), std::move(out), {&x},
      [](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
      });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
  if (parts.empty()) throw Error(Errc::ShapeMismatch, "concat of nothing");
  const std::size_t ax = normalize_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw Error(Errc::ShapeMismatch, "concat rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d])
        throw Error(Errc::ShapeMismatch, "concat " + shape_string(p.shape()) + " vs " + shape_string(parts[0].shape()));
    }
    out_shape[ax] += p.shape()[ax];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= out_shape[d];
  std::size_t inner = 1;
  for (std::size_t d = ax + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[ax] * inner);
  const std::size_t row = out_shape[ax] * inner;
  std::vector<Scalar> out(numel(out_shape));
  std::size_t col = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const auto src = parts[j].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[j]), widths[j],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
    col += widths[j];
  }
  return make_result<Scalar>(std::move(out_shape), std::move(out), parts,
      [widths, outer, row](detail::Node<Scalar>& self) {
        std::size_t col = 0;
        for (std::size_t j = 0; j < widths.size(); ++j) {
          if (Scalar* g = parent_grad(self, j)) {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < widths[j]; ++i) g[o * widths[j] + i] += self.grad[o * row + col + i];
          }
          col += widths[j];
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class BinaryKind { Add, Mul };

template <typename Scalar>
Tensor<Scalar> broadcast_binary(const Tensor<Scalar>& a_in, const Tensor<Scalar>& b_in, BinaryKind kind) {
  const bool swap = !is_suffix(b_in.shape(), a_in.shape());
  if (swap && !is_suffix(a_in.shape(), b_in.shape()))
    throw Error(Errc::ShapeMismatch, shape_string(a_in.shape()) + " vs " + shape_string(b_in.shape()));
  const Tensor<Scalar>& a = swap ? b_in : a_in;
  const Tensor<Scalar>& b = swap ? a_in : b_in;
  const std::size_t n = a.numel();
  const std::size_t period = b.numel();
  std::vector<Scalar> out(n);
  const auto x = a.data();
  const auto y = b.data();
  if (period == 0) return make_result<Scalar>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<Scalar>&) {});
  for (std::size_t i = 0; i < n; ++i)
    out[i] = kind == BinaryKind::Add ? x[i] + y[i % period] : x[i] * y[i % period];
  return make_result<Scalar>(a.shape(), std::move(out), {&a, &b},
      [kind, period](detail::Node<Scalar>& self) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        Scalar* ga = parent_grad(self, 0);
        Scalar* gb = parent_grad(self, 1);
        const std::size_t n = self.grad.size();
        for (std::size_t i = 0; i < n; ++i) {
          const Scalar g = self.grad[i];
          if (kind == BinaryKind::Add) {
            if (ga) ga[i] += g;
            if (gb) gb[i % period] += g;
          } else {
            if (ga) ga[i] += g * y[i % period];
            if (gb) gb[i % period] += g * x[i];
          }
        }
      });
}

template <typename Scalar, typename F, typename DF>
Tensor<Scalar> unary(const Tensor<Scalar>& x, F f, DF df) {
  // df(input, output) -> local derivative
  std::vector<Scalar> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<Scalar>(x.shape(), std::move(out), {&x},
      [df](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& in = self.parents[0]->data;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * df(in[i], self.data[i]);
      });
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return broadcast_binary(a, b, BinaryKind::Add);
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return broadcast_binary(a, b, BinaryKind::Mul);
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  return unary<Scalar>(
      x, [factor](Scalar v) { return v * factor; }, [factor](Scalar, Scalar) { return factor; });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!is_suffix(b.shape(), a.shape()) && is_suffix(a.shape(), b.shape()))
    return add(scale(b, Scalar(-1)), a);
  return add(a, scale(b, Scalar(-1)));
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return unary<Scalar>(
      x, [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
      [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  constexpr Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
  constexpr Scalar k = static_cast<Scalar>(0.044715);
  return unary<Scalar>(
      x,
      [](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::tanh(c * (v + k * v * v * v))); },
      [](Scalar v, Scalar) {
        const Scalar t = std::tanh(c * (v + k * v * v * v));
        return Scalar(0.5) * (Scalar(1) + t) +
               Scalar(0.5) * v * (Scalar(1) - t * t) * c * (Scalar(1) + Scalar(3) * k * v * v);
      });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  return unary<Scalar>(
      x,
      [](Scalar v) {
        if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, bool train, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(Errc::InvalidArgument, "dropout p must be in [0, 1)");
  if (!train || p == 0.0) return x;
  const auto keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  auto factors = std::make_shared<std::vector<Scalar>>(x.numel());
  for (std::size_t i = 0; i < factors->size(); ++i)
    (*factors)[i] = uniform_at(seed, i) >= p ? keep_scale : Scalar(0);
  std::vector<Scalar> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * (*factors)[i];
  return make_result<Scalar>(x.shape(), std::move(out), {&x},
      [factors](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * (*factors)[i];
      });
}

template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& x, std::span<const std::uint8_t> mask, Scalar value) {
  if (mask.size() != x.numel())
    throw Error(Errc::ShapeMismatch, "mask of " + std::to_string(mask.size()) + " for " + shape_string(x.shape()));
  auto keep = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  return make_result<Scalar>(x.shape(), std::move(out), {&x},
      [keep](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (!(*keep)[i]) gx[i] += self.grad[i];
      });
}

// ---------------------------------------------------------------------------
// Indexing

template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const std::int32_t> ids,
                                Shape ids_shape) {
  if (table.rank() != 2) throw Error(Errc::ShapeMismatch, "embedding table must be rank 2");
  if (numel(ids_shape) != ids.size()) throw Error(Errc::ShapeMismatch, "ids do not match ids_shape");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  auto rows = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  std::vector<Scalar> out(ids.size() * d);
  const auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw Error(Errc::IdOutOfRange, "id " + std::to_string(ids[i]) + " for table of " + std::to_string(vocab));
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Shape out_shape = std::move(ids_shape);
  out_shape.push_back(d);
  return make_result<Scalar>(std::move(out_shape), std::move(out), {&table},
      [rows, d](detail::Node<Scalar>& self) {
        Scalar* gt = parent_grad(self, 0);
        if (!gt) return;
        for (std::size_t i = 0; i < rows->size(); ++i) {
          Scalar* dst = gt + static_cast<std::size_t>((*rows)[i]) * d;
          const Scalar* src = self.grad.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::span<const std::int32_t> positions,
                           std::size_t per_batch) {
  if (x.rank() != 3) throw Error(Errc::ShapeMismatch, "gather_rows expects [B, L, d]");
  const std::size_t batch = x.dim(0);
  const std::size_t length = x.dim(1);
  const std::size_t d = x.dim(2);
  if (positions.size() != batch * per_batch) throw Error(Errc::ShapeMismatch, "positions do not cover the batch");
  auto src = std::make_shared<std::vector<std::size_t>>(positions.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < per_batch; ++s) {
      const std::int32_t p = positions[b * per_batch + s];
      if (p < 0 || static_cast<std::size_t>(p) >= length)
        throw Error(Errc::IndexOutOfRange, "position " + std::to_string(p) + " for length " + std::to_string(length));
      (*src)[b * per_batch + s] = (b * length + static_cast<std::size_t>(p)) * d;
    }
  }
  std::vector<Scalar> out(positions.size() * d);
  const auto in = x.data();
  for (std::size_t i = 0; i < src->size(); ++i)
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((*src)[i]), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  return make_result<Scalar>(Shape{batch, per_batch, d}, std::move(out), {&x},
      [src, d](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < src->size(); ++i)
          for (std::size_t j = 0; j < d; ++j) gx[(*src)[i] + j] += self.grad[i * d + j];
      });
}

// ---------------------------------------------------------------------------
// Normalization and reductions

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const std::size_t n = x.shape()[ax];
  std::size_t inner = 1;
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::size_t outer = n == 0 ? 0 : x.numel() / (n * inner);
  std::vector<Scalar> out(x.numel());
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      if (mx == -std::numeric_limits<Scalar>::infinity()) {
        for (std::size_t i = 0; i < n; ++i) out[base + i * inner] = Scalar(0);
        continue;
      }
      Scalar total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const Scalar e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= total;
    }
  }
  return make_result<Scalar>(x.shape(), std::move(out), {&x},
      [outer, n, inner](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& y = self.data;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * n * inner + j;
            Scalar dot = 0;
            for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t at = base + i * inner;
              gx[at] += y[at] * (g[at] - dot);
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x) {
  if (x.rank() < 1) throw Error(Errc::InvalidAxis, "log_softmax on a scalar");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  std::vector<Scalar> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = in.data() + r * n;
    const Scalar mx = *std::max_element(row, row + n);
    Scalar total = 0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(row[i] - mx);
    const Scalar lse = mx + std::log(total);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = row[i] - lse;
  }
  return make_result<Scalar>(x.shape(), std::move(out), {&x},
      [rows, n](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
          Scalar gsum = 0;
          for (std::size_t i = 0; i < n; ++i) gsum += self.grad[r * n + i];
          for (std::size_t i = 0; i < n; ++i)
            gx[r * n + i] += self.grad[r * n + i] - std::exp(self.data[r * n + i]) * gsum;
        }
      });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps) {
  if (x.rank() < 1) throw Error(Errc::ShapeMismatch, "layer_norm on a scalar");
  const std::size_t h = x.dim(-1);
  if (gamma.shape() != Shape{h} || beta.shape() != Shape{h})
    throw Error(Errc::ShapeMismatch, "layer_norm gamma/beta must be [" + std::to_string(h) + "]");
  const std::size_t rows = h == 0 ? 0 : x.numel() / h;
  auto xhat = std::make_shared<std::vector<Scalar>>(x.numel());
  auto rstd = std::make_shared<std::vector<Scalar>>(rows);
  std::vector<Scalar> out(x.numel());
  const auto in = x.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = in.data() + r * h;
    Scalar mu = 0;
    for (std::size_t i = 0; i < h; ++i) mu += row[i];
    mu /= static_cast<Scalar>(h);
    Scalar var = 0;
    for (std::size_t i = 0; i < h; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<Scalar>(h);
    const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
    (*rstd)[r] = inv;
    for (std::size_t i = 0; i < h; ++i) {
      const Scalar xh = (row[i] - mu) * inv;
      (*xhat)[r * h + i] = xh;
      out[r * h + i] = xh * g[i] + b[i];
    }
  }
  return make_result<Scalar>(x.shape(), std::move(out), {&x, &gamma, &beta},
      [xhat, rstd, rows, h](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        Scalar* gg = parent_grad(self, 1);
        Scalar* gb = parent_grad(self, 2);
        const auto& gamma = self.parents[1]->data;
        for (std::size_t r = 0; r < rows; ++r) {
          const Scalar* dy = self.grad.data() + r * h;
          const Scalar* xh = xhat->data() + r * h;
          if (gg || gb) {
            for (std::size_t i = 0; i < h; ++i) {
              if (gg) gg[i] += dy[i] * xh[i];
              if (gb) gb[i] += dy[i];
            }
          }
          if (!gx) continue;
          Scalar mean_d = 0;
          Scalar mean_dx = 0;
          for (std::size_t i = 0; i < h; ++i) {
            const Scalar d = dy[i] * gamma[i];
            mean_d += d;
            mean_dx += d * xh[i];
          }
          mean_d /= static_cast<Scalar>(h);
          mean_dx /= static_cast<Scalar>(h);
          for (std::size_t i = 0; i < h; ++i)
            gx[r * h + i] += (*rstd)[r] * (dy[i] * gamma[i] - mean_d - xh[i] * mean_dx);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Scalar total = 0;
  for (Scalar v : x.data()) total += v;
  return make_result<Scalar>(Shape{}, std::vector<Scalar>{total}, {&x},
      [](detail::Node<Scalar>& self) {
        Scalar* gx = parent_grad(self, 0);
        if (!gx) return;
        const std::size_t n = self.parents[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
      });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  if (x.numel() == 0) throw Error(Errc::ShapeMismatch, "mean of empty tensor");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel()));
}

// ---------------------------------------------------------------------------
// Losses

// Clamp keeps log finite for saturated probabilities.
template <typename Scalar>
constexpr Scalar kProbFloor = static_cast<Scalar>(1e-12);

template <typename Scalar>
Tensor<Scalar> binary_cross_entropy(const Tensor<Scalar>& probs, std::span<const Scalar> targets,
                                    std::span<const Scalar> weights) {
  const std::size_t n = probs.numel();
  if (targets.size() != n || weights.size() != n)
    throw Error(Errc::ShapeMismatch, "bce: " + std::to_string(n) + " scores vs " +
                                         std::to_string(targets.size()) + " labels");
  Scalar total_weight = 0;
  for (Scalar w : weights) total_weight += w;
  if (total_weight <= Scalar(0)) throw Error(Errc::AllMasked, "every sentence is masked");
  constexpr Scalar lo = kProbFloor<Scalar>;
  const auto p = probs.data();
  Scalar loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar q = std::clamp(p[i], lo, Scalar(1) - lo);
    loss -= weights[i] * (targets[i] * std::log(q) + (Scalar(1) - targets[i]) * std::log(Scalar(1) - q));
  }
  loss /= total_weight;
  auto t = std::make_shared<std::vector<Scalar>>(targets.begin(), targets.end());
  auto w = std::make_shared<std::vector<Scalar>>(weights.begin(), weights.end());
  return make_result<Scalar>(Shape{}, std::vector<Scalar>{loss}, {&probs},
      [t, w, total_weight](detail::Node<Scalar>& self) {
        Scalar* gp = parent_grad(self, 0);
        if (!gp) return;
        const auto& p = self.parents[0]->data;
        const Scalar g = self.grad[0] / total_weight;
        constexpr Scalar lo = kProbFloor<Scalar>;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const Scalar q = std::clamp(p[i], lo, Scalar(1) - lo);
          gp[i] += g * (*w)[i] * (-(*t)[i] / q + (Scalar(1) - (*t)[i]) / (Scalar(1) - q));
        }
      });
}

template <typename Scalar>
Tensor<Scalar> smoothed_cross_entropy(const Tensor<Scalar>& logits,
                                      std::span<const std::int32_t> targets,
                                      std::span<const Scalar> weights, double smoothing) {
  if (!(smoothing >= 0.0 && smoothing < 1.0))
    throw Error(Errc::InvalidArgument, "label smoothing must be in [0, 1)");
  if (logits.rank() < 1) throw Error(Errc::ShapeMismatch, "logits must have a vocabulary axis");
  const std::size_t v = logits.dim(-1);
  const std::size_t rows = v == 0 ? 0 : logits.numel() / v;
  if (targets.size() != rows || weights.size() != rows)
    throw Error(Errc::ShapeMismatch, "cross entropy: " + std::to_string(rows) + " rows vs " +
                                         std::to_string(targets.size()) + " targets");
  Scalar total_weight = 0;
  for (Scalar w : weights) total_weight += w;
  if (total_weight <= Scalar(0)) throw Error(Errc::AllMasked, "every target position is masked");
  const auto on = static_cast<Scalar>(1.0 - smoothing);
  const auto off = static_cast<Scalar>(smoothing / static_cast<double>(v));
  auto probs = std::make_shared<std::vector<Scalar>>(logits.numel());
  const auto z = logits.data();
  Scalar loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == Scalar(0)) continue;
    const std::int32_t target = targets[r];
    if (target < 0 || static_cast<std::size_t>(target) >= v)
      throw Error(Errc::IdOutOfRange, "target " + std::to_string(target));
    const Scalar* row = z.data() + r * v;
    const Scalar mx = *std::max_element(row, row + v);
    Scalar total = 0;
    for (std::size_t i = 0; i < v; ++i) total += std::exp(row[i] - mx);
    const Scalar lse = mx + std::log(total);
    Scalar row_loss = -on * (row[target] - lse);
    if (off != Scalar(0)) {
      Scalar sum_logp = 0;
      for (std::size_t i = 0; i < v; ++i) sum_logp += row[i] - lse;
      row_loss -= off * sum_logp;
    }
    loss += weights[r] * row_loss;
    for (std::size_t i = 0; i < v; ++i) (*probs)[r * v + i] = std::exp(row[i] - lse);
  }
  loss /= total_weight;
  auto t = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
  auto w = std::make_shared<std::vector<Scalar>>(weights.begin(), weights.end());
  return make_result<Scalar>(Shape{}, std::vector<Scalar>{loss}, {&logits},
      [probs, t, w, total_weight, on, off, rows, v](detail::Node<Scalar>& self) {
        Scalar* gz = parent_grad(self, 0);
        if (!gz) return;
        const Scalar g = self.grad[0] / total_weight;
        for (std::size_t r = 0; r < rows; ++r) {
          if ((*w)[r] == Scalar(0)) continue;
          const Scalar gr = g * (*w)[r];
          for (std::size_t i = 0; i < v; ++i) {
            Scalar q = off;
            if (static_cast<std::int32_t>(i) == (*t)[r]) q += on;
            gz[r * v + i] += gr * ((*probs)[r * v + i] - q);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Differentiation

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.numel() != 1) throw Error(Errc::NotScalar, "backward from shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) throw Error(Errc::InvalidArgument, "loss does not require grad");

  using NodeT = detail::Node<Scalar>;
  // Iterative post-order DFS; state 1 = on stack, 2 = finished.
  std::vector<NodeT*> order;
  std::unordered_map<NodeT*, int> state;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  state[loss.node().get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (!parent->requires_grad) continue;
      int& s = state[parent];
      if (s == 1) throw Error(Errc::GraphCycle, "cycle in autodiff graph");
      if (s == 0) {
        s = 1;
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    state[node] = 2;
    order.push_back(node);
    stack.pop_back();
  }

  NodeT* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (!node->backward_fn || !node->has_grad) continue;
    node->backward_fn(*node);
    // Release intermediate gradients so a later sweep starts clean.
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->has_grad = false;
  }
}

template <typename Scalar>
double finite_diff_check(const std::function<Tensor<Scalar>()>& loss_fn,
                         std::span<Tensor<Scalar>> params, double eps) {
  if (!(eps > 0.0)) throw Error(Errc::InvalidArgument, "eps must be positive");
  for (auto& p : params) p.zero_grad();
  {
    const Tensor<Scalar> loss = loss_fn();
    backward(loss);
  }
  std::vector<std::vector<Scalar>> analytic;
  for (auto& p : params) {
    const auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    analytic.back().resize(p.numel(), Scalar(0));
  }
  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Scalar original = data[i];
      data[i] = original + static_cast<Scalar>(eps);
      const double plus = static_cast<double>(loss_fn().item());
      data[i] = original - static_cast<Scalar>(eps);
      const double minus = static_cast<double>(loss_fn().item());
      data[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double exact = static_cast<double>(analytic[k][i]);
      worst = std::max(worst, std::abs(numeric - exact) / std::max(1.0, std::abs(exact)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Instantiations

#define SUMFORGE_INSTANTIATE(S)                                                                  \
  template class Tensor<S>;                                                                      \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> transpose(const Tensor<S>&);                                                \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<std::size_t>&);                 \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                           \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                                 \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> scale(const Tensor<S>&, S);                                                 \
  template Tensor<S> relu(const Tensor<S>&);                                                     \
  template Tensor<S> gelu(const Tensor<S>&);                                                     \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                  \
  template Tensor<S> dropout(const Tensor<S>&, double, bool, std::uint64_t);                     \
  template Tensor<S> masked_fill(const Tensor<S>&, std::span<const std::uint8_t>, S);            \
  template Tensor<S> embedding_lookup(const Tensor<S>&, std::span<const std::int32_t>, Shape);   \
  template Tensor<S> gather_rows(const Tensor<S>&, std::span<const std::int32_t>, std::size_t);  \
  template Tensor<S> softmax(const Tensor<S>&, int);                                             \
  template Tensor<S> log_softmax(const Tensor<S>&);                                              \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);   \
  template Tensor<S> sum(const Tensor<S>&);                                                      \
  template Tensor<S> mean(const Tensor<S>&);                                                     \
  template Tensor<S> binary_cross_entropy(const Tensor<S>&, std::span<const S>,                  \
                                          std::span<const S>);                                   \
  template Tensor<S> smoothed_cross_entropy(const Tensor<S>&, std::span<const std::int32_t>,     \
                                            std::span<const S>, double);                         \
  template void backward(const Tensor<S>&);                                                      \
  template double finite_diff_check(const std::function<Tensor<S>()>&, std::span<Tensor<S>>,     \
                                    double);

SUMFORGE_INSTANTIATE(float)
SUMFORGE_INSTANTIATE(double)

#undef SUMFORGE_INSTANTIATE

}  // namespace sumforge

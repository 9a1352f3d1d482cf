#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mrla/errors.hpp"
#include "mrla/rng.hpp"

namespace mrla {

using Shape = std::vector<std::size_t>;

template <class S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Reverse-mode graph node. `value` is the row-major flat buffer; `grad` is the
// persistent gradient accumulated across backward passes; `gbuf` is the
// pass-local upstream gradient, valid only inside one backward() call.
namespace detail {

template <class S>
struct TensorNode {
  Shape shape;
  ArrX<S> value;
  ArrX<S> grad;
  ArrX<S> gbuf;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  std::size_t numel() const { return static_cast<std::size_t>(value.size()); }
};

inline thread_local bool grad_mode_enabled = true;

}  // namespace detail

// Disables graph construction in scope (evaluation / benchmarking paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense n-d tensor handle templated on scalar (float = f32, double = f64).
// Values are immutable after construction; gradient buffers mutate only
// during backward() and the explicit optimizer step.
template <class S>
class Tensor {
 public:
  using Scalar = S;
  using Node = detail::TensorNode<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return leaf(std::move(shape), S(0), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return leaf(std::move(shape), S(1), requires_grad);
  }
  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    return leaf(std::move(shape), v, requires_grad);
  }
  static Tensor scalar(S v) { return full({1}, v); }

  static Tensor from_data(Shape shape, std::vector<S> vals, bool requires_grad = false) {
    if (shape_numel(shape) != vals.size()) {
      throw shape_error("from_data: shape " + shape_str(shape) + " needs " +
                        std::to_string(shape_numel(shape)) + " values, got " +
                        std::to_string(vals.size()));
    }
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = Eigen::Map<const ArrX<S>>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, S lo = S(-1), S hi = S(1),
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (Eigen::Index i = 0; i < t.n_->value.size(); ++i) {
      t.n_->value[i] = rng.uniform<S>(lo, hi);
    }
    return t;
  }

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t size() const { return n_->numel(); }
  std::size_t extent(std::size_t axis) const { return n_->shape.at(axis); }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    if (!n_->parents.empty()) {
      throw contract_error("set_requires_grad: only leaf tensors may be toggled");
    }
    n_->requires_grad = on;
    return *this;
  }

  std::span<const S> data() const { return {n_->value.data(), n_->numel()}; }

  S item() const {
    if (size() != 1) {
      throw contract_error("item: tensor " + shape_str(shape()) + " is not a scalar");
    }
    return n_->value[0];
  }

  S operator()(std::size_t i) const { return n_->value[static_cast<Eigen::Index>(i)]; }
  S operator()(std::size_t i, std::size_t j) const {
    return n_->value[static_cast<Eigen::Index>(i * n_->shape[1] + j)];
  }
  S operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return n_->value[static_cast<Eigen::Index>((i * n_->shape[1] + j) * n_->shape[2] + k)];
  }

  bool has_grad() const { return n_ && n_->grad.size() > 0; }
  std::span<const S> grad() const {
    return {n_->grad.data(), static_cast<std::size_t>(n_->grad.size())};
  }
  void zero_grad() {
    if (n_ && n_->grad.size() > 0) n_->grad.setZero();
  }

  std::shared_ptr<Node> node() const { return n_; }

  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  static Tensor leaf(Shape shape, S fill, bool requires_grad) {
    Tensor t;
    t.n_ = std::make_shared<Node>();
    auto n = shape_numel(shape);
    t.n_->shape = std::move(shape);
    t.n_->value = ArrX<S>::Constant(static_cast<Eigen::Index>(n), fill);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<Node> n_;
};

namespace detail {

// Builds an op result node. Parents and the backprop closure are only
// attached when grad mode is on and some input participates in a graph.
template <class S>
Tensor<S> make_op(Shape shape, ArrX<S> value, std::vector<Tensor<S>> inputs,
                  std::function<void(TensorNode<S>&)> backprop) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = false;
  if (grad_mode_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backprop = std::move(backprop);
  }
  return Tensor<S>::wrap(std::move(n));
}

template <class S>
ArrX<S>& gbuf_of(TensorNode<S>& node) {
  return node.gbuf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reverse-mode driver.
//
// Accumulating contract: backward() adds into the persistent .grad of every
// requires-grad ancestor; calling it twice without zero_grad doubles the
// gradients. Pass-local flow uses gbuf, re-zeroed at the start of each call.
// ---------------------------------------------------------------------------
template <class S>
void backward(const Tensor<S>& root) {
  using Node = detail::TensorNode<S>;
  if (root.size() != 1) {
    throw contract_error("backward: root " + shape_str(root.shape()) + " is not a scalar");
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* child = node->parents[next_child++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  // topo is post-order: parents before the root; reverse iteration flows
  // gradients from the root down.
  for (Node* n : topo) n->gbuf = ArrX<S>::Zero(static_cast<Eigen::Index>(n->numel()));
  root.node()->gbuf[0] = S(1);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad) {
      if (n->grad.size() == 0) n->grad = ArrX<S>::Zero(static_cast<Eigen::Index>(n->numel()));
      n->grad += n->gbuf;
    }
    if (n->backprop) n->backprop(*n);
  }
  for (Node* n : topo) n->gbuf.resize(0);
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

namespace detail {
template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!same_shape(a.shape(), b.shape())) {
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}
}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  ArrX<S> v = a.node()->value + b.node()->value;
  return detail::make_op<S>(a.shape(), std::move(v), {a, b}, [](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf += self.gbuf;
    self.parents[1]->gbuf += self.gbuf;
  });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  ArrX<S> v = a.node()->value - b.node()->value;
  return detail::make_op<S>(a.shape(), std::move(v), {a, b}, [](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf += self.gbuf;
    self.parents[1]->gbuf -= self.gbuf;
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  ArrX<S> v = a.node()->value * b.node()->value;
  return detail::make_op<S>(a.shape(), std::move(v), {a, b}, [](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf += self.gbuf * self.parents[1]->value;
    self.parents[1]->gbuf += self.gbuf * self.parents[0]->value;
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  ArrX<S> v = a.node()->value * c;
  return detail::make_op<S>(a.shape(), std::move(v), {a}, [c](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf += self.gbuf * c;
  });
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <class S>
Tensor<S> operator*(S c, const Tensor<S>& a) { return scale(a, c); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, S c) { return scale(a, c); }

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  ArrX<S> v(1);
  v[0] = x.node()->value.sum();
  return detail::make_op<S>({1}, std::move(v), {x}, [](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf += self.gbuf[0];
  });
}

// Multiplies every element by a one-element tensor (differentiable in both).
template <class S>
Tensor<S> mul_by_scalar_tensor(const Tensor<S>& x, const Tensor<S>& s) {
  if (s.size() != 1) {
    throw shape_error("mul_by_scalar_tensor: scale " + shape_str(s.shape()) + " is not a scalar");
  }
  ArrX<S> v = x.node()->value * s.node()->value[0];
  return detail::make_op<S>(x.shape(), std::move(v), {x, s}, [](detail::TensorNode<S>& self) {
    const S sv = self.parents[1]->value[0];
    self.parents[0]->gbuf += self.gbuf * sv;
    self.parents[1]->gbuf[0] += (self.gbuf * self.parents[0]->value).sum();
  });
}

// Divides every element by a one-element tensor; |denominator| below `floor`
// raises a degenerate-normalization error.
template <class S>
Tensor<S> div_by_scalar_tensor(const Tensor<S>& x, const Tensor<S>& s, S floor = S(0)) {
  if (s.size() != 1) {
    throw shape_error("div_by_scalar_tensor: denominator " + shape_str(s.shape()) +
                      " is not a scalar");
  }
  const S sv = s.node()->value[0];
  if (std::abs(static_cast<double>(sv)) < static_cast<double>(floor)) {
    throw numeric_error("div_by_scalar_tensor: degenerate normalization, |denominator| = " +
                        std::to_string(std::abs(static_cast<double>(sv))));
  }
  ArrX<S> v = x.node()->value / sv;
  return detail::make_op<S>(x.shape(), std::move(v), {x, s}, [](detail::TensorNode<S>& self) {
    const S d = self.parents[1]->value[0];
    self.parents[0]->gbuf += self.gbuf / d;
    self.parents[1]->gbuf[0] -= (self.gbuf * self.parents[0]->value).sum() / (d * d);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto n = static_cast<Eigen::Index>(b.shape()[1]);
  Eigen::Map<const RowMat<S>> A(a.data().data(), m, k), B(b.data().data(), k, n);
  ArrX<S> v(m * n);
  Eigen::Map<RowMat<S>>(v.data(), m, n) = A * B;
  return detail::make_op<S>({a.shape()[0], b.shape()[1]}, std::move(v), {a, b},
                            [m, k, n](detail::TensorNode<S>& self) {
    Eigen::Map<const RowMat<S>> G(self.gbuf.data(), m, n);
    Eigen::Map<const RowMat<S>> A(self.parents[0]->value.data(), m, k);
    Eigen::Map<const RowMat<S>> B(self.parents[1]->value.data(), k, n);
    Eigen::Map<RowMat<S>>(self.parents[0]->gbuf.data(), m, k) += G * B.transpose();
    Eigen::Map<RowMat<S>>(self.parents[1]->gbuf.data(), k, n) += A.transpose() * G;
  });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) {
    throw shape_error("transpose: expected rank-2, got " + shape_str(a.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.shape()[0]);
  const auto n = static_cast<Eigen::Index>(a.shape()[1]);
  ArrX<S> v(m * n);
  Eigen::Map<RowMat<S>>(v.data(), n, m) =
      Eigen::Map<const RowMat<S>>(a.data().data(), m, n).transpose();
  return detail::make_op<S>({a.shape()[1], a.shape()[0]}, std::move(v), {a},
                            [m, n](detail::TensorNode<S>& self) {
    Eigen::Map<RowMat<S>>(self.parents[0]->gbuf.data(), m, n) +=
        Eigen::Map<const RowMat<S>>(self.gbuf.data(), n, m).transpose();
  });
}

// ---------------------------------------------------------------------------
// Convolutions and pooling
// ---------------------------------------------------------------------------

// Same-length 1-D convolution with zero padding (k−1)/2; k must be odd.
template <class S>
Tensor<S> conv1d_same(const Tensor<S>& x, const Tensor<S>& kernel) {
  if (x.rank() != 1 || kernel.rank() != 1) {
    throw shape_error("conv1d_same: expected rank-1 input and kernel, got " +
                      shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const std::size_t c = x.shape()[0];
  const std::size_t k = kernel.shape()[0];
  if (k % 2 == 0) {
    throw config_error("conv1d_same: kernel size " + std::to_string(k) + " must be odd");
  }
  if (k > 2 * c - 1) {
    throw shape_error("conv1d_same: kernel size " + std::to_string(k) + " exceeds 2*" +
                      std::to_string(c) + "-1");
  }
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(k - 1) / 2;
  const auto& xv = x.node()->value;
  const auto& wv = kernel.node()->value;
  ArrX<S> v = ArrX<S>::Zero(static_cast<Eigen::Index>(c));
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(c); ++i) {
    S acc = 0;
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(k); ++j) {
      const std::ptrdiff_t src = i + j - p;
      if (src >= 0 && src < static_cast<std::ptrdiff_t>(c)) acc += wv[j] * xv[src];
    }
    v[i] = acc;
  }
  return detail::make_op<S>({c}, std::move(v), {x, kernel},
                            [c, k, p](detail::TensorNode<S>& self) {
    const auto& g = self.gbuf;
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    auto& gx = self.parents[0]->gbuf;
    auto& gw = self.parents[1]->gbuf;
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(c); ++i) {
      for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(k); ++j) {
        const std::ptrdiff_t src = i + j - p;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(c)) {
          gx[src] += g[i] * wv[j];
          gw[j] += g[i] * xv[src];
        }
      }
    }
  });
}

// 3x3 depthwise convolution over an HxWxC map, zero padding 1, no bias.
template <class S>
Tensor<S> dwconv3x3_same(const Tensor<S>& x, const Tensor<S>& w) {
  if (x.rank() != 3) {
    throw shape_error("dwconv3x3_same: expected HxWxC input, got " + shape_str(x.shape()));
  }
  if (w.rank() != 3 || w.shape()[0] != 3 || w.shape()[1] != 3) {
    throw shape_error("dwconv3x3_same: expected 3x3xC weights, got " + shape_str(w.shape()));
  }
  if (w.shape()[2] != x.shape()[2]) {
    throw shape_error("dwconv3x3_same: channel mismatch, input " + shape_str(x.shape()) +
                      " vs weights " + shape_str(w.shape()));
  }
  const std::size_t h = x.shape()[0], wd = x.shape()[1], c = x.shape()[2];
  const auto& xv = x.node()->value;
  const auto& wv = w.node()->value;
  ArrX<S> v = ArrX<S>::Zero(static_cast<Eigen::Index>(h * wd * c));
  auto xat = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::size_t ch) -> S {
    if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(h) ||
        j >= static_cast<std::ptrdiff_t>(wd)) {
      return S(0);
    }
    return xv[(static_cast<std::size_t>(i) * wd + static_cast<std::size_t>(j)) * c + ch];
  };
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < wd; ++j) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        S acc = 0;
        for (std::size_t a = 0; a < 3; ++a) {
          for (std::size_t b = 0; b < 3; ++b) {
            acc += wv[(a * 3 + b) * c + ch] *
                   xat(static_cast<std::ptrdiff_t>(i + a) - 1,
                       static_cast<std::ptrdiff_t>(j + b) - 1, ch);
          }
        }
        v[(i * wd + j) * c + ch] = acc;
      }
    }
  }
  return detail::make_op<S>(x.shape(), std::move(v), {x, w},
                            [h, wd, c](detail::TensorNode<S>& self) {
    const auto& g = self.gbuf;
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    auto& gx = self.parents[0]->gbuf;
    auto& gw = self.parents[1]->gbuf;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < wd; ++j) {
        for (std::size_t a = 0; a < 3; ++a) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + a) - 1;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t b = 0; b < 3; ++b) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + b) - 1;
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(wd)) continue;
            const std::size_t src =
                (static_cast<std::size_t>(si) * wd + static_cast<std::size_t>(sj)) * c;
            const std::size_t dst = (i * wd + j) * c;
            const std::size_t wij = (a * 3 + b) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              gx[src + ch] += g[dst + ch] * wv[wij + ch];
              gw[wij + ch] += g[dst + ch] * xv[src + ch];
            }
          }
        }
      }
    }
  });
}

// Global average pooling: HxWxC -> C (per-channel spatial mean).
template <class S>
Tensor<S> gap(const Tensor<S>& x) {
  if (x.rank() != 3 || x.shape()[0] < 1 || x.shape()[1] < 1) {
    throw shape_error("gap: expected HxWxC input, got " + shape_str(x.shape()));
  }
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const auto& xv = x.node()->value;
  ArrX<S> v = ArrX<S>::Zero(static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) v[ch] += xv[i * c + ch];
  }
  v /= static_cast<S>(h * w);
  return detail::make_op<S>({c}, std::move(v), {x}, [h, w, c](detail::TensorNode<S>& self) {
    const S inv = S(1) / static_cast<S>(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        self.parents[0]->gbuf[i * c + ch] += self.gbuf[ch] * inv;
      }
    }
  });
}

// 2x2 average pooling over even HxWxC maps (toy-model stage transitions).
template <class S>
Tensor<S> avgpool2x2(const Tensor<S>& x) {
  if (x.rank() != 3 || x.shape()[0] % 2 != 0 || x.shape()[1] % 2 != 0) {
    throw shape_error("avgpool2x2: expected even HxWxC input, got " + shape_str(x.shape()));
  }
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const std::size_t ho = h / 2, wo = w / 2;
  const auto& xv = x.node()->value;
  ArrX<S> v = ArrX<S>::Zero(static_cast<Eigen::Index>(ho * wo * c));
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        S acc = xv[((2 * i) * w + 2 * j) * c + ch] + xv[((2 * i) * w + 2 * j + 1) * c + ch] +
                xv[((2 * i + 1) * w + 2 * j) * c + ch] +
                xv[((2 * i + 1) * w + 2 * j + 1) * c + ch];
        v[(i * wo + j) * c + ch] = acc / S(4);
      }
    }
  }
  return detail::make_op<S>({ho, wo, c}, std::move(v), {x},
                            [h, w, c, ho, wo](detail::TensorNode<S>& self) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const S g = self.gbuf[(i * wo + j) * c + ch] / S(4);
          self.parents[0]->gbuf[((2 * i) * w + 2 * j) * c + ch] += g;
          self.parents[0]->gbuf[((2 * i) * w + 2 * j + 1) * c + ch] += g;
          self.parents[0]->gbuf[((2 * i + 1) * w + 2 * j) * c + ch] += g;
          self.parents[0]->gbuf[((2 * i + 1) * w + 2 * j + 1) * c + ch] += g;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  ArrX<S> v = (S(1) / (S(1) + (-x.node()->value).exp()));
  return detail::make_op<S>(x.shape(), std::move(v), {x}, [](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf += self.gbuf * self.value * (S(1) - self.value);
  });
}

// Exact erf-based GELU (not the tanh approximation).
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  const auto& xv = x.node()->value;
  ArrX<S> v(xv.size());
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const double z = static_cast<double>(xv[i]);
    v[i] = static_cast<S>(0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2)));
  }
  return detail::make_op<S>(x.shape(), std::move(v), {x}, [](detail::TensorNode<S>& self) {
    const auto& xv = self.parents[0]->value;
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double z = static_cast<double>(xv[i]);
      const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
      self.parents[0]->gbuf[i] += self.gbuf[i] * static_cast<S>(cdf + z * pdf);
    }
  });
}

// Row-wise softmax over the last axis (rank >= 1; leading axes index rows).
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  if (x.rank() < 1) {
    throw shape_error("softmax_rows: expected rank >= 1, got " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  const auto& xv = x.node()->value;
  ArrX<S> v(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto seg = xv.segment(static_cast<Eigen::Index>(r * cols),
                                static_cast<Eigen::Index>(cols));
    ArrX<S> e = (seg - seg.maxCoeff()).exp();
    v.segment(static_cast<Eigen::Index>(r * cols), static_cast<Eigen::Index>(cols)) =
        e / e.sum();
  }
  return detail::make_op<S>(x.shape(), std::move(v), {x},
                            [rows, cols](detail::TensorNode<S>& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      const auto y = self.value.segment(static_cast<Eigen::Index>(r * cols),
                                        static_cast<Eigen::Index>(cols));
      const auto g = self.gbuf.segment(static_cast<Eigen::Index>(r * cols),
                                       static_cast<Eigen::Index>(cols));
      const S dot = (g * y).sum();
      self.parents[0]->gbuf.segment(static_cast<Eigen::Index>(r * cols),
                                    static_cast<Eigen::Index>(cols)) += y * (g - dot);
    }
  });
}

// phi(x) = ELU(x) + 1: strictly positive feature map for kernel attention.
template <class S>
Tensor<S> elu_plus_one(const Tensor<S>& x) {
  const auto& xv = x.node()->value;
  ArrX<S> v(xv.size());
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    v[i] = xv[i] > S(0) ? xv[i] + S(1) : static_cast<S>(std::exp(static_cast<double>(xv[i])));
  }
  return detail::make_op<S>(x.shape(), std::move(v), {x}, [](detail::TensorNode<S>& self) {
    const auto& xv = self.parents[0]->value;
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const S d = xv[i] > S(0) ? S(1) : self.value[i];  // exp(x) below zero
      self.parents[0]->gbuf[i] += self.gbuf[i] * d;
    }
  });
}

enum class Activation { Sigmoid, Gelu, SoftmaxRows };

template <class S>
Tensor<S> activation(const Tensor<S>& x, Activation kind) {
  switch (kind) {
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Gelu: return gelu(x);
    case Activation::SoftmaxRows: return softmax_rows(x);
  }
  throw config_error("activation: unknown kind");
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " +
                      shape_str(shape));
  }
  ArrX<S> v = x.node()->value;
  return detail::make_op<S>(std::move(shape), std::move(v), {x},
                            [](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf += self.gbuf;
  });
}

// Slice [begin, begin+len) of the last axis; leading axes untouched.
template <class S>
Tensor<S> slice_last(const Tensor<S>& x, std::size_t begin, std::size_t len) {
  const std::size_t last = x.shape().back();
  if (begin + len > last) {
    throw shape_error("slice_last: [" + std::to_string(begin) + ", " +
                      std::to_string(begin + len) + ") exceeds last extent of " +
                      shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / last;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  const auto& xv = x.node()->value;
  ArrX<S> v(static_cast<Eigen::Index>(rows * len));
  for (std::size_t r = 0; r < rows; ++r) {
    v.segment(static_cast<Eigen::Index>(r * len), static_cast<Eigen::Index>(len)) =
        xv.segment(static_cast<Eigen::Index>(r * last + begin), static_cast<Eigen::Index>(len));
  }
  return detail::make_op<S>(std::move(out_shape), std::move(v), {x},
                            [rows, last, begin, len](detail::TensorNode<S>& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      self.parents[0]->gbuf.segment(static_cast<Eigen::Index>(r * last + begin),
                                    static_cast<Eigen::Index>(len)) +=
          self.gbuf.segment(static_cast<Eigen::Index>(r * len), static_cast<Eigen::Index>(len));
    }
  });
}

// Concatenate along the last axis; all parts share leading extents.
template <class S>
Tensor<S> concat_last(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw shape_error("concat_last: empty part list");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total_last = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    pl.pop_back();
    if (pl != lead) {
      throw shape_error("concat_last: leading extents differ, " + shape_str(parts[0].shape()) +
                        " vs " + shape_str(p.shape()));
    }
    total_last += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total_last);
  ArrX<S> v(static_cast<Eigen::Index>(rows * total_last));
  std::vector<std::size_t> lasts;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pl = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
      v.segment(static_cast<Eigen::Index>(r * total_last + off), static_cast<Eigen::Index>(pl)) =
          p.node()->value.segment(static_cast<Eigen::Index>(r * pl),
                                  static_cast<Eigen::Index>(pl));
    }
    lasts.push_back(pl);
    off += pl;
  }
  return detail::make_op<S>(std::move(out_shape), std::move(v), parts,
                            [rows, total_last, lasts](detail::TensorNode<S>& self) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < lasts.size(); ++pi) {
      for (std::size_t r = 0; r < rows; ++r) {
        self.parents[pi]->gbuf.segment(static_cast<Eigen::Index>(r * lasts[pi]),
                                       static_cast<Eigen::Index>(lasts[pi])) +=
            self.gbuf.segment(static_cast<Eigen::Index>(r * total_last + off),
                              static_cast<Eigen::Index>(lasts[pi]));
      }
      off += lasts[pi];
    }
  });
}

// Slice [begin, begin+len) rows of a rank-2 tensor.
template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, std::size_t begin, std::size_t len) {
  if (x.rank() != 2) {
    throw shape_error("slice_rows: expected rank-2, got " + shape_str(x.shape()));
  }
  if (begin + len > x.shape()[0]) {
    throw shape_error("slice_rows: [" + std::to_string(begin) + ", " +
                      std::to_string(begin + len) + ") exceeds rows of " +
                      shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[1];
  ArrX<S> v = x.node()->value.segment(static_cast<Eigen::Index>(begin * n),
                                      static_cast<Eigen::Index>(len * n));
  return detail::make_op<S>({len, n}, std::move(v), {x},
                            [begin, len, n](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf.segment(static_cast<Eigen::Index>(begin * n),
                                  static_cast<Eigen::Index>(len * n)) += self.gbuf;
  });
}

// Stack two rank-2 tensors with equal column counts.
template <class S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw shape_error("concat_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  }
  const std::size_t ma = a.shape()[0], mb = b.shape()[0], n = a.shape()[1];
  ArrX<S> v(static_cast<Eigen::Index>((ma + mb) * n));
  v.head(static_cast<Eigen::Index>(ma * n)) = a.node()->value;
  v.tail(static_cast<Eigen::Index>(mb * n)) = b.node()->value;
  return detail::make_op<S>({ma + mb, n}, std::move(v), {a, b},
                            [ma, mb, n](detail::TensorNode<S>& self) {
    self.parents[0]->gbuf += self.gbuf.head(static_cast<Eigen::Index>(ma * n));
    self.parents[1]->gbuf += self.gbuf.tail(static_cast<Eigen::Index>(mb * n));
  });
}

// Tile a length-C vector across leading spatial axes: expand_channels(v, {H,W})
// gives HxWxC. Gradient sums back over the tiled positions.
template <class S>
Tensor<S> expand_channels(const Tensor<S>& v, Shape lead) {
  if (v.rank() != 1) {
    throw shape_error("expand_channels: expected rank-1 vector, got " + shape_str(v.shape()));
  }
  const std::size_t c = v.shape()[0];
  const std::size_t rows = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(c);
  ArrX<S> out(static_cast<Eigen::Index>(rows * c));
  for (std::size_t r = 0; r < rows; ++r) {
    out.segment(static_cast<Eigen::Index>(r * c), static_cast<Eigen::Index>(c)) =
        v.node()->value;
  }
  return detail::make_op<S>(std::move(out_shape), std::move(out), {v},
                            [rows, c](detail::TensorNode<S>& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      self.parents[0]->gbuf +=
          self.gbuf.segment(static_cast<Eigen::Index>(r * c), static_cast<Eigen::Index>(c));
    }
  });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Numerically stable softmax cross-entropy against an integer label.
// Accepts a length-K vector or a 1xK row; returns a scalar.
template <class S>
Tensor<S> cross_entropy_logits(const Tensor<S>& logits, std::size_t label) {
  const std::size_t k = logits.shape().back();
  if (logits.size() != k) {
    throw shape_error("cross_entropy_logits: expected a single row, got " +
                      shape_str(logits.shape()));
  }
  if (label >= k) {
    throw contract_error("cross_entropy_logits: label " + std::to_string(label) +
                         " out of range for " + std::to_string(k) + " classes");
  }
  const auto& z = logits.node()->value;
  const S zmax = z.maxCoeff();
  const S lse = zmax + static_cast<S>(std::log((z - zmax).exp().sum()));
  ArrX<S> v(1);
  v[0] = lse - z[static_cast<Eigen::Index>(label)];
  return detail::make_op<S>({1}, std::move(v), {logits},
                            [label, lse](detail::TensorNode<S>& self) {
    const auto& z = self.parents[0]->value;
    const S g = self.gbuf[0];
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      S p = static_cast<S>(std::exp(static_cast<double>(z[i] - lse)));
      if (static_cast<std::size_t>(i) == label) p -= S(1);
      self.parents[0]->gbuf[i] += g * p;
    }
  });
}

// ---------------------------------------------------------------------------
// Optimizer step and small helpers
// ---------------------------------------------------------------------------

// In-place SGD over leaf parameters. The only sanctioned mutation of a
// tensor's value; no graph may reference the parameters mid-update.
template <class S>
void sgd_step(std::vector<Tensor<S>>& params, S lr) {
  for (auto& p : params) {
    if (p.has_grad()) p.node()->value -= lr * p.node()->grad;
  }
}

template <class S>
void zero_grads(std::vector<Tensor<S>>& params) {
  for (auto& p : params) p.zero_grad();
}

template <class S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "max_abs_diff");
  return static_cast<double>((a.node()->value - b.node()->value).abs().maxCoeff());
}

template <class S>
bool all_finite(const Tensor<S>& a) {
  return a.node()->value.isFinite().all();
}

}  // namespace mrla

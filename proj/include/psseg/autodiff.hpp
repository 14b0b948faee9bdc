// Reverse-mode differentiation over dense tensors, limited to the operations the
// temporal convolution model and its losses need.
//
// A Tape records every value produced during one forward pass. Nodes are
// appended in execution order, so reverse creation order is a valid reverse
// topological order and backward() visits each node once. Gradients are
// accumulated (never overwritten), which is what makes fan-out correct.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace psseg::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "x" : "") << shape[i];
  s << ']';
  return s.str();
}

template <typename Real>
class Tape;

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const { return node().shape; }
  std::span<const Real> values() const { return node().value; }
  std::span<const Real> grad() const { return node().grad; }
  bool requires_grad() const { return node().requires_grad; }
  std::size_t id() const { return id_; }
  Tape<Real>& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

  Real item() const {
    if (values().size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return values()[0];
  }

  std::size_t rows() const { return shape().at(0); }
  std::size_t cols() const { return shape().at(1); }

 private:
  friend class Tape<Real>;
  Tensor(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}
  const auto& node() const { return tape_->nodes_.at(id_); }

  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<Real> leaf(Shape shape, std::vector<Real> values, bool requires_grad) {
    check_size(shape, values);
    nodes_.push_back({std::move(shape), std::move(values), {}, requires_grad, {}});
    return {this, nodes_.size() - 1};
  }

  Tensor<Real> constant(Shape shape, std::vector<Real> values) {
    return leaf(std::move(shape), std::move(values), false);
  }

  Tensor<Real> parameter(Shape shape, std::vector<Real> values) {
    return leaf(std::move(shape), std::move(values), true);
  }

  // Records a derived value. The node requires grad iff any input does; the
  // backward function is only kept (and later run) in that case.
  Tensor<Real> record(Shape shape, std::vector<Real> values,
                      std::initializer_list<Tensor<Real>> inputs, BackwardFn backward) {
    check_size(shape, values);
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw std::invalid_argument("tensor belongs to a different tape");
      needs = needs || nodes_[in.id_].requires_grad;
    }
    nodes_.push_back({std::move(shape), std::move(values), {}, needs,
                      needs ? std::move(backward) : BackwardFn{}});
    return {this, nodes_.size() - 1};
  }

  // Seeds d(root)/d(root) = 1 and propagates to every node that requires grad.
  void backward(const Tensor<Real>& root) {
    if (root.tape_ != this) throw std::invalid_argument("root belongs to a different tape");
    if (nodes_[root.id_].value.size() != 1) throw std::invalid_argument("backward root must be scalar");
    if (!nodes_[root.id_].requires_grad) return;
    grad_buffer(root.id_)[0] += Real(1);
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  std::span<const Real> value(std::size_t id) const { return nodes_[id].value; }
  std::span<const Real> grad(std::size_t id) const { return nodes_[id].grad; }
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Zero-initialised on first use.
  std::vector<Real>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), Real(0));
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void warn(std::string message) { warnings_.push_back(std::move(message)); }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  friend class Tensor<Real>;

  struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  static void check_size(const Shape& shape, const std::vector<Real>& values) {
    if (numel(shape) != values.size())
      throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  std::vector<Node> nodes_;
  std::vector<std::string> warnings_;
};

namespace detail {

template <typename Real>
void require_matrix(const Tensor<Real>& x, const char* op) {
  if (x.shape().size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected (channels, frames), got " +
                                shape_str(x.shape()));
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

// Valid output frame range [lo, hi) for a tap displaced by `offset` frames.
inline void tap_range(std::ptrdiff_t frames, std::ptrdiff_t offset, std::ptrdiff_t& lo,
                      std::ptrdiff_t& hi) {
  lo = std::max<std::ptrdiff_t>(0, -offset);
  hi = std::min<std::ptrdiff_t>(frames, frames - offset);
}

}  // namespace detail

/// Dilated 1-D convolution with symmetric zero padding dilation*(K-1)/2, so the
/// output has as many frames as the input:
///   y[o,t] = b[o] + sum_{i,k} w[o,i,k] * x[i, t + (k - (K-1)/2) * dilation].
template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    std::size_t dilation) {
  detail::require_matrix(x, "conv1d");
  if (w.shape().size() != 3) throw std::invalid_argument("conv1d: weight must be (out, in, kernel)");
  const std::size_t cin = x.rows();
  const std::size_t frames = x.cols();
  const std::size_t cout = w.shape()[0];
  const std::size_t kernel = w.shape()[2];
  if (w.shape()[1] != cin)
    throw std::invalid_argument("conv1d: weight expects " + std::to_string(w.shape()[1]) +
                                " input channels, got " + std::to_string(cin));
  if (b.shape() != Shape{cout}) throw std::invalid_argument("conv1d: bias must be (out)");
  if (kernel % 2 == 0) throw std::invalid_argument("conv1d: kernel size must be odd");
  if (dilation < 1) throw std::invalid_argument("conv1d: dilation must be >= 1");

  const auto T = static_cast<std::ptrdiff_t>(frames);
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto dil = static_cast<std::ptrdiff_t>(dilation);
  auto tap_offset = [=](std::size_t k) { return (static_cast<std::ptrdiff_t>(k) - half) * dil; };

  const auto xv = x.values();
  const auto wv = w.values();
  const auto bv = b.values();
  std::vector<Real> y(cout * frames);
  for (std::size_t o = 0; o < cout; ++o) {
    Real* yo = y.data() + o * frames;
    std::fill(yo, yo + frames, bv[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const Real* xi = xv.data() + i * frames;
      for (std::size_t k = 0; k < kernel; ++k) {
        const Real wk = wv[(o * cin + i) * kernel + k];
        const std::ptrdiff_t off = tap_offset(k);
        std::ptrdiff_t lo, hi;
        detail::tap_range(T, off, lo, hi);
#pragma omp simd
        for (std::ptrdiff_t t = lo; t < hi; ++t) yo[t] += wk * xi[t + off];
      }
    }
  }

  const std::size_t xid = x.id(), wid = w.id(), bid = b.id();
  return x.tape().record(
      {cout, frames}, std::move(y), {x, w, b},
      [=](Tape<Real>& tape, std::size_t self) {
        const auto dy = tape.grad(self);
        const auto xv = tape.value(xid);
        const auto wv = tape.value(wid);
        if (tape.requires_grad(bid)) {
          auto& db = tape.grad_buffer(bid);
          for (std::size_t o = 0; o < cout; ++o) {
            const Real* dyo = dy.data() + o * frames;
            Real acc = 0;
#pragma omp simd reduction(+ : acc)
            for (std::size_t t = 0; t < frames; ++t) acc += dyo[t];
            db[o] += acc;
          }
        }
        if (tape.requires_grad(wid)) {
          auto& dw = tape.grad_buffer(wid);
          for (std::size_t o = 0; o < cout; ++o) {
            const Real* dyo = dy.data() + o * frames;
            for (std::size_t i = 0; i < cin; ++i) {
              const Real* xi = xv.data() + i * frames;
              for (std::size_t k = 0; k < kernel; ++k) {
                const std::ptrdiff_t off = tap_offset(k);
                std::ptrdiff_t lo, hi;
                detail::tap_range(T, off, lo, hi);
                Real acc = 0;
#pragma omp simd reduction(+ : acc)
                for (std::ptrdiff_t t = lo; t < hi; ++t) acc += dyo[t] * xi[t + off];
                dw[(o * cin + i) * kernel + k] += acc;
              }
            }
          }
        }
        if (tape.requires_grad(xid)) {
          auto& dx = tape.grad_buffer(xid);
          for (std::size_t o = 0; o < cout; ++o) {
            const Real* dyo = dy.data() + o * frames;
            for (std::size_t i = 0; i < cin; ++i) {
              Real* dxi = dx.data() + i * frames;
              for (std::size_t k = 0; k < kernel; ++k) {
                const Real wk = wv[(o * cin + i) * kernel + k];
                const std::ptrdiff_t off = tap_offset(k);
                std::ptrdiff_t lo, hi;
                detail::tap_range(T, off, lo, hi);
#pragma omp simd
                for (std::ptrdiff_t t = lo; t < hi; ++t) dxi[t + off] += wk * dyo[t];
              }
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  std::vector<Real> y(x.values().begin(), x.values().end());
  for (auto& v : y) v = v > Real(0) ? v : Real(0);
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(y), {x}, [=](Tape<Real>& tape, std::size_t self) {
    const auto dy = tape.grad(self);
    const auto xv = tape.value(xid);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xv[i] > Real(0)) dx[i] += dy[i];
  });
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<Real> y(a.values().size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(a.shape(), std::move(y), {a, b}, [=](Tape<Real>& tape, std::size_t self) {
    const auto dy = tape.grad(self);
    for (std::size_t id : {aid, bid}) {
      if (!tape.requires_grad(id)) continue;
      auto& d = tape.grad_buffer(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor) {
  std::vector<Real> y(x.values().begin(), x.values().end());
  for (auto& v : y) v *= factor;
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(y), {x}, [=](Tape<Real>& tape, std::size_t self) {
    const auto dy = tape.grad(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dy[i];
  });
}

/// Stacks a (Ca x T) and b (Cb x T) into (Ca + Cb) x T.
template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_matrix(a, "concat_channels");
  detail::require_matrix(b, "concat_channels");
  if (a.cols() != b.cols())
    throw std::invalid_argument("concat_channels: frame counts differ (" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
  std::vector<Real> y;
  y.reserve(a.values().size() + b.values().size());
  y.insert(y.end(), a.values().begin(), a.values().end());
  y.insert(y.end(), b.values().begin(), b.values().end());
  const std::size_t aid = a.id(), bid = b.id();
  const std::size_t split = a.values().size();
  return a.tape().record({a.rows() + b.rows(), a.cols()}, std::move(y), {a, b},
                         [=](Tape<Real>& tape, std::size_t self) {
                           const auto dy = tape.grad(self);
                           if (tape.requires_grad(aid)) {
                             auto& da = tape.grad_buffer(aid);
                             for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
                           }
                           if (tape.requires_grad(bid)) {
                             auto& db = tape.grad_buffer(bid);
                             for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[split + i];
                           }
                         });
}

namespace detail {

// Column-wise log-softmax of a C x T row-major matrix.
template <typename Real>
std::vector<Real> log_softmax_columns(std::span<const Real> x, std::size_t classes,
                                      std::size_t frames) {
  std::vector<Real> out(x.size());
  for (std::size_t t = 0; t < frames; ++t) {
    Real mx = x[t];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, x[c * frames + t]);
    Real sum = 0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(x[c * frames + t] - mx);
    const Real lse = mx + std::log(sum);
    for (std::size_t c = 0; c < classes; ++c) out[c * frames + t] = x[c * frames + t] - lse;
  }
  return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> log_softmax_channels(const Tensor<Real>& x) {
  detail::require_matrix(x, "log_softmax_channels");
  const std::size_t C = x.rows(), T = x.cols();
  auto y = detail::log_softmax_columns<Real>(x.values(), C, T);
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(y), {x}, [=](Tape<Real>& tape, std::size_t self) {
    const auto dy = tape.grad(self);
    const auto yv = tape.value(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t t = 0; t < T; ++t) {
      Real total = 0;
      for (std::size_t c = 0; c < C; ++c) total += dy[c * T + t];
      for (std::size_t c = 0; c < C; ++c)
        dx[c * T + t] += dy[c * T + t] - std::exp(yv[c * T + t]) * total;
    }
  });
}

template <typename Real>
Tensor<Real> softmax_channels(const Tensor<Real>& x) {
  detail::require_matrix(x, "softmax_channels");
  const std::size_t C = x.rows(), T = x.cols();
  auto y = detail::log_softmax_columns<Real>(x.values(), C, T);
  for (auto& v : y) v = std::exp(v);
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(y), {x}, [=](Tape<Real>& tape, std::size_t self) {
    const auto dy = tape.grad(self);
    const auto yv = tape.value(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t t = 0; t < T; ++t) {
      Real dot = 0;
      for (std::size_t c = 0; c < C; ++c) dot += dy[c * T + t] * yv[c * T + t];
      for (std::size_t c = 0; c < C; ++c)
        dx[c * T + t] += yv[c * T + t] * (dy[c * T + t] - dot);
    }
  });
}

/// Mean over frames of -log softmax(logits)[labels[t], t].
template <typename Real, typename LabelT>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const LabelT> labels) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t C = logits.rows(), T = logits.cols();
  if (labels.size() != T)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(T) + " frames");
  std::vector<std::size_t> target(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= C)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[t]) +
                                  " at frame " + std::to_string(t) + " outside [0, " +
                                  std::to_string(C) + ")");
    target[t] = static_cast<std::size_t>(labels[t]);
  }
  auto logp = detail::log_softmax_columns<Real>(logits.values(), C, T);
  Real loss = 0;
  for (std::size_t t = 0; t < T; ++t) loss -= logp[target[t] * T + t];
  loss /= static_cast<Real>(T);
  const std::size_t xid = logits.id();
  return logits.tape().record(
      {}, {loss}, {logits},
      [=, logp = std::move(logp), target = std::move(target)](Tape<Real>& tape, std::size_t self) {
        const Real g = tape.grad(self)[0] / static_cast<Real>(T);
        auto& dx = tape.grad_buffer(xid);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t t = 0; t < T; ++t) {
            const Real p = std::exp(logp[c * T + t]);
            dx[c * T + t] += g * (p - (target[t] == c ? Real(1) : Real(0)));
          }
      });
}

/// Truncated temporal smoothing loss: mean over classes and adjacent frame
/// pairs of min(|d|, tau)^2 with d = x[c,t] - x[c,t-1]. The earlier frame is
/// treated as a constant, so gradient reaches x only through frame t.
/// Fewer than two frames yields 0 and a tape warning.
template <typename Real>
Tensor<Real> truncated_smoothing_mse(const Tensor<Real>& logprobs, Real tau) {
  detail::require_matrix(logprobs, "truncated_smoothing_mse");
  const std::size_t C = logprobs.rows(), T = logprobs.cols();
  auto& tape = logprobs.tape();
  if (T < 2) {
    tape.warn("truncated_smoothing_mse: fewer than 2 frames, smoothing term is 0");
    return tape.record({}, {Real(0)}, {logprobs}, [](Tape<Real>&, std::size_t) {});
  }
  const auto x = logprobs.values();
  const Real norm = static_cast<Real>(C * (T - 1));
  Real loss = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 1; t < T; ++t) {
      const Real d = std::min(std::abs(x[c * T + t] - x[c * T + t - 1]), tau);
      loss += d * d;
    }
  loss /= norm;
  const std::size_t xid = logprobs.id();
  return tape.record({}, {loss}, {logprobs}, [=](Tape<Real>& tape, std::size_t self) {
    const Real g = tape.grad(self)[0];
    const auto x = tape.value(xid);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 1; t < T; ++t) {
        const Real d = x[c * T + t] - x[c * T + t - 1];
        if (std::abs(d) < tau) dx[c * T + t] += g * Real(2) * d / norm;
      }
  });
}

}  // namespace psseg::ad

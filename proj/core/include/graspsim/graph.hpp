#pragma once

// Reverse-mode differentiation over a statically known layer sequence.
//
// A Graph is built once per network: each op call appends a node with
// persistent value/gradient buffers and forward/backward closures over the
// already-allocated buffers, so training steps allocate nothing. Parameters
// are named nodes; backward() accumulates into their gradients, which lets a
// caller sum gradients over a minibatch in a fixed order before an optimizer
// step.
//
// The scalar type is a template parameter: float for training, double for
// finite-difference gradient checking. Float convolutions dispatch to the
// vectorized kernels; every other type uses the reference loops.
//
// Gradient buffers of single-consumer intermediate nodes are overwritten by
// their consumer rather than zeroed-then-accumulated; multi-consumer and
// unconsumed nodes are zeroed at the start of backward(). Parameter
// gradients always accumulate and are only cleared by zero_param_grads().

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspsim/conv_kernels.hpp"
#include "graspsim/tensor.hpp"

namespace grasp {

inline std::string shape_string(const std::vector<int>& s) {
  return Tensor<float>::shape_string(s);
}

namespace detail {

// y = x W + b with W[in][out] (output index contiguous).
template <typename T>
void fc_fwd(const T* x, const T* w, const T* b, T* y, int n, int m) {
  for (int j = 0; j < m; ++j) y[j] = b[j];
  for (int i = 0; i < n; ++i) {
    const T xi = x[i];
    const T* wrow = w + static_cast<size_t>(i) * m;
#pragma omp simd
    for (int j = 0; j < m; ++j) y[j] += xi * wrow[j];
  }
}

template <typename T>
void fc_bwd_dx(const T* dy, const T* w, T* dx, int n, int m, bool acc) {
  for (int i = 0; i < n; ++i) {
    const T* wrow = w + static_cast<size_t>(i) * m;
    T s = 0;
#pragma omp simd reduction(+ : s)
    for (int j = 0; j < m; ++j) s += dy[j] * wrow[j];
    dx[i] = acc ? dx[i] + s : s;
  }
}

template <typename T>
void fc_bwd_dw(const T* x, const T* dy, T* dw, T* db, int n, int m) {
  for (int j = 0; j < m; ++j) db[j] += dy[j];
  for (int i = 0; i < n; ++i) {
    const T xi = x[i];
    T* wrow = dw + static_cast<size_t>(i) * m;
#pragma omp simd
    for (int j = 0; j < m; ++j) wrow[j] += xi * dy[j];
  }
}

}  // namespace detail

template <typename T>
class Graph {
 public:
  struct Node {
    std::string name;
    std::vector<int> shape;
    std::vector<T> val;
    std::vector<T> grad;
    std::vector<T> aux;    // op scratch (softmax probabilities, conv weight transpose)
    std::vector<int> iaux; // pooling argmax
    bool is_param = false;
    bool needs_grad = false;
    int consumers = 0;
    int last_consumer = -1;
    int index = -1;
    std::function<void()> fwd;
    std::function<void()> bwd;

    size_t numel() const { return val.size(); }
    int dim(size_t i) const { return shape.at(i); }
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  // Closures capture only Node pointers (stable under move), so graphs can
  // be returned from factory functions.
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // --- Leaves -------------------------------------------------------------

  Node* input(std::string name, std::vector<int> shape) {
    Node* n = add(std::move(name), std::move(shape));
    return n;
  }

  Node* param(std::string name, std::vector<int> shape) {
    Node* n = add(std::move(name), std::move(shape));
    n->is_param = true;
    n->needs_grad = true;
    n->grad.assign(n->numel(), T(0));
    params_.push_back(n);
    return n;
  }

  // --- Layers -------------------------------------------------------------

  enum class Pad { valid, same };

  Node* conv2d(const std::string& name, Node* x, int filters, int k,
               int stride, int dilation, Pad pad) {
    if (x->shape.size() != 3)
      throw std::invalid_argument("conv2d " + name + ": input must be HxWxC, got " +
                                  shape_string(x->shape));
    kern::ConvShape s = kern::make_conv_shape(x->dim(0), x->dim(1), x->dim(2), k, k,
                                              filters, stride, dilation,
                                              pad == Pad::same);
    if (s.OH <= 0 || s.OW <= 0)
      throw std::invalid_argument("conv2d " + name + ": kernel does not fit input " +
                                  shape_string(x->shape));
    Node* w = param(name + ".w", {k, k, x->dim(2), filters});
    Node* b = param(name + ".b", {filters});
    consume(x);
    Node* out = add(name, {s.OH, s.OW, filters});
    out->needs_grad = true;
    out->aux.assign(static_cast<size_t>(k) * k * s.C * s.F, T(0));

    const T* in = x->val.data();
    const T* wp = w->val.data();
    const T* bp = b->val.data();
    T* op = out->val.data();
    out->fwd = [s, in, wp, bp, op] {
      if constexpr (std::is_same_v<T, float>)
        kern::conv2d_fwd(s, in, wp, bp, op);
      else
        kern::conv2d_fwd_ref(s, in, wp, bp, op);
    };
    Node* xn = x;
    out->bwd = [s, xn, w, b, out] {
      const T* g = out->grad.data();
      if constexpr (std::is_same_v<T, float>) {
        kern::conv2d_dw(s, xn->val.data(), g, w->grad.data(), b->grad.data());
        if (xn->needs_grad)
          kern::conv2d_din(s, w->val.data(), g, xn->grad.data(),
                           out->aux.data(),
                           /*din_untouched=*/!accumulate_into(xn));
      } else {
        kern::conv2d_dw_ref(s, xn->val.data(), g, w->grad.data(),
                            b->grad.data());
        if (xn->needs_grad) {
          if (!accumulate_into(xn))
            std::fill(xn->grad.begin(), xn->grad.end(), T(0));
          kern::conv2d_din_ref(s, w->val.data(), g, xn->grad.data());
        }
      }
    };
    return out;
  }

  Node* maxpool2(Node* x) {
    if (x->shape.size() != 3)
      throw std::invalid_argument("maxpool2: input must be HxWxC, got " +
                                  shape_string(x->shape));
    const int H = x->dim(0), W = x->dim(1), C = x->dim(2);
    if (H < 2 || W < 2)
      throw std::invalid_argument("maxpool2: window larger than input " +
                                  shape_string(x->shape));
    consume(x);
    Node* out = add("", {H / 2, W / 2, C});
    out->needs_grad = x->needs_grad;
    out->iaux.assign(out->numel(), 0);
    Node* xn = x;
    out->fwd = [xn, out, H, W, C] {
      kern::maxpool2_fwd(H, W, C, xn->val.data(), out->val.data(),
                         out->iaux.data());
    };
    if (x->needs_grad) {
      out->bwd = [xn, out, H, W, C] {
        if (accumulate_into(xn))
          kern::maxpool2_bwd(H / 2, W / 2, C, out->grad.data(),
                             out->iaux.data(), xn->grad.data());
        else
          kern::maxpool2_bwd_dense(H, W, C, out->grad.data(), out->iaux.data(),
                                   xn->grad.data());
      };
    }
    return out;
  }

  Node* relu(Node* x) { return elementwise(x, Ew::relu); }
  Node* tanh_act(Node* x) { return elementwise(x, Ew::tanh); }
  Node* sigmoid(Node* x) { return elementwise(x, Ew::sigmoid); }

  Node* fc(const std::string& name, Node* x, int out_dim) {
    const int n = static_cast<int>(x->numel());
    Node* w = param(name + ".w", {n, out_dim});
    Node* b = param(name + ".b", {out_dim});
    consume(x);
    Node* out = add(name, {out_dim});
    out->needs_grad = true;
    Node* xn = x;
    out->fwd = [xn, w, b, out, n, out_dim] {
      detail::fc_fwd(xn->val.data(), w->val.data(), b->val.data(),
                     out->val.data(), n, out_dim);
    };
    out->bwd = [xn, w, b, out, n, out_dim] {
      detail::fc_bwd_dw(xn->val.data(), out->grad.data(), w->grad.data(),
                        b->grad.data(), n, out_dim);
      if (xn->needs_grad)
        detail::fc_bwd_dx(out->grad.data(), w->val.data(), xn->grad.data(), n,
                          out_dim, accumulate_into(xn));
    };
    return out;
  }

  Node* concat(Node* a, Node* b) {
    consume(a);
    consume(b);
    const size_t na = a->numel(), nb = b->numel();
    Node* out = add("", {static_cast<int>(na + nb)});
    out->needs_grad = a->needs_grad || b->needs_grad;
    out->fwd = [a, b, out, na, nb] {
      std::memcpy(out->val.data(), a->val.data(), na * sizeof(T));
      std::memcpy(out->val.data() + na, b->val.data(), nb * sizeof(T));
    };
    if (out->needs_grad) {
      out->bwd = [a, b, out, na, nb] {
        const T* g = out->grad.data();
        if (a->needs_grad) axpy_or_copy(g, a, na);
        if (b->needs_grad) axpy_or_copy(g + na, b, nb);
      };
    }
    return out;
  }

  // Per channel: softmax over the HxW cells, then the expected (x, y)
  // position with both axes normalized to [-1, 1] (top-left = (-1, -1)).
  // Output layout: [x_0, y_0, x_1, y_1, ...].
  Node* spatial_softmax(Node* x) {
    if (x->shape.size() != 3)
      throw std::invalid_argument("spatial_softmax: input must be HxWxC, got " +
                                  shape_string(x->shape));
    const int H = x->dim(0), W = x->dim(1), C = x->dim(2);
    consume(x);
    Node* out = add("", {2 * C});
    out->needs_grad = x->needs_grad;
    out->aux.assign(x->numel(), T(0));  // cached probabilities
    Node* xn = x;
    out->fwd = [xn, out, H, W, C] {
      const T* a = xn->val.data();
      T* p = out->aux.data();
      const size_t cells = static_cast<size_t>(H) * W;
      for (int c = 0; c < C; ++c) {
        T mx = a[c];
        for (size_t i = 1; i < cells; ++i) mx = std::max(mx, a[i * C + c]);
        T z = 0;
        for (size_t i = 0; i < cells; ++i) {
          const T e = std::exp(a[i * C + c] - mx);
          p[i * C + c] = e;
          z += e;
        }
        T ex = 0, ey = 0;
        for (int yy = 0; yy < H; ++yy) {
          for (int xx = 0; xx < W; ++xx) {
            const T pi = p[(static_cast<size_t>(yy) * W + xx) * C + c] /= z;
            ex += pi * norm_coord(xx, W);
            ey += pi * norm_coord(yy, H);
          }
        }
        out->val[2 * c] = ex;
        out->val[2 * c + 1] = ey;
      }
    };
    if (x->needs_grad) {
      out->bwd = [xn, out, H, W, C] {
        const T* p = out->aux.data();
        const bool acc = accumulate_into(xn);
        for (int c = 0; c < C; ++c) {
          const T gx = out->grad[2 * c], gy = out->grad[2 * c + 1];
          const T ex = out->val[2 * c], ey = out->val[2 * c + 1];
          for (int yy = 0; yy < H; ++yy) {
            for (int xx = 0; xx < W; ++xx) {
              const size_t i = (static_cast<size_t>(yy) * W + xx) * C + c;
              const T d = p[i] * ((norm_coord(xx, W) - ex) * gx +
                                  (norm_coord(yy, H) - ey) * gy);
              xn->grad[i] = acc ? xn->grad[i] + d : d;
            }
          }
        }
      };
    }
    return out;
  }

  // Scalar sum of squared differences (Eq. 1 per-sample term).
  Node* l2_diff(Node* pred, Node* target) {
    if (pred->numel() != target->numel())
      throw std::invalid_argument("l2_diff: shape mismatch " +
                                  shape_string(pred->shape) + " vs " +
                                  shape_string(target->shape));
    consume(pred);
    consume(target);
    Node* out = add("", {1});
    out->needs_grad = pred->needs_grad || target->needs_grad;
    const size_t n = pred->numel();
    out->fwd = [pred, target, out, n] {
      double s = 0;
      for (size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred->val[i]) - target->val[i];
        s += d * d;
      }
      out->val[0] = static_cast<T>(s);
    };
    if (out->needs_grad) {
      out->bwd = [pred, target, out, n] {
        const T g = out->grad[0];
        if (pred->needs_grad) {
          const bool acc = accumulate_into(pred);
          for (size_t i = 0; i < n; ++i) {
            const T d = T(2) * (pred->val[i] - target->val[i]) * g;
            pred->grad[i] = acc ? pred->grad[i] + d : d;
          }
        }
        if (target->needs_grad) {
          const bool acc = accumulate_into(target);
          for (size_t i = 0; i < n; ++i) {
            const T d = T(-2) * (pred->val[i] - target->val[i]) * g;
            target->grad[i] = acc ? target->grad[i] + d : d;
          }
        }
      };
    }
    return out;
  }

  // Mean per-element binary cross-entropy, computed from logits in the
  // numerically stable form max(z,0) - z*y + log(1 + exp(-|z|)).
  Node* bce_with_logits(Node* logits, Node* target) {
    if (logits->numel() != target->numel())
      throw std::invalid_argument("bce_with_logits: shape mismatch " +
                                  shape_string(logits->shape) + " vs " +
                                  shape_string(target->shape));
    consume(logits);
    consume(target);
    Node* out = add("", {1});
    out->needs_grad = logits->needs_grad;
    const size_t n = logits->numel();
    out->fwd = [logits, target, out, n] {
      double s = 0;
      for (size_t i = 0; i < n; ++i) {
        const double z = logits->val[i], y = target->val[i];
        s += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
      }
      out->val[0] = static_cast<T>(s / static_cast<double>(n));
    };
    if (out->needs_grad) {
      out->bwd = [logits, target, out, n] {
        const T g = out->grad[0] / static_cast<T>(n);
        const bool acc = accumulate_into(logits);
        for (size_t i = 0; i < n; ++i) {
          const T z = logits->val[i];
          const T sig = T(1) / (T(1) + std::exp(-z));
          const T d = (sig - target->val[i]) * g;
          logits->grad[i] = acc ? logits->grad[i] + d : d;
        }
      };
    }
    return out;
  }

  // Scalar sum of all elements.
  Node* sum(Node* x) {
    consume(x);
    Node* out = add("", {1});
    out->needs_grad = x->needs_grad;
    const size_t n = x->numel();
    out->fwd = [x, out, n] {
      double s = 0;
      for (size_t i = 0; i < n; ++i) s += static_cast<double>(x->val[i]);
      out->val[0] = static_cast<T>(s);
    };
    if (x->needs_grad) {
      out->bwd = [x, out, n] {
        const T g = out->grad[0];
        const bool acc = accumulate_into(x);
        for (size_t i = 0; i < n; ++i) x->grad[i] = acc ? x->grad[i] + g : g;
      };
    }
    return out;
  }

  // out = wa * a + wb * b, elementwise (used to combine scalar losses).
  Node* add_weighted(Node* a, Node* b, T wa, T wb) {
    if (a->numel() != b->numel())
      throw std::invalid_argument("add_weighted: shape mismatch " +
                                  shape_string(a->shape) + " vs " +
                                  shape_string(b->shape));
    consume(a);
    consume(b);
    Node* out = add("", a->shape);
    out->needs_grad = a->needs_grad || b->needs_grad;
    const size_t n = a->numel();
    out->fwd = [a, b, out, wa, wb, n] {
      for (size_t i = 0; i < n; ++i)
        out->val[i] = wa * a->val[i] + wb * b->val[i];
    };
    if (out->needs_grad) {
      out->bwd = [a, b, out, wa, wb, n] {
        if (a->needs_grad) {
          const bool acc = accumulate_into(a);
          for (size_t i = 0; i < n; ++i) {
            const T d = wa * out->grad[i];
            a->grad[i] = acc ? a->grad[i] + d : d;
          }
        }
        if (b->needs_grad) {
          const bool acc = accumulate_into(b);
          for (size_t i = 0; i < n; ++i) {
            const T d = wb * out->grad[i];
            b->grad[i] = acc ? b->grad[i] + d : d;
          }
        }
      };
    }
    return out;
  }

  // --- Execution ----------------------------------------------------------

  // Runs forward closures in creation order up to and including `until`
  // (default: the whole graph).
  void forward(Node* until = nullptr) {
    const int stop = until ? until->index : static_cast<int>(nodes_.size()) - 1;
    for (int i = 0; i <= stop; ++i)
      if (nodes_[i]->fwd) nodes_[i]->fwd();
    forwarded_to_ = stop;
  }

  // Seeds d(loss)/d(loss) = seed and accumulates parameter gradients.
  // A seed of 1/batch_size turns per-sample sum-losses into batch means.
  void backward(Node* loss, T seed = T(1)) {
    if (loss->numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_string(loss->shape));
    if (forwarded_to_ < loss->index)
      throw std::runtime_error("backward: called before forward covered the loss node");
    // Multi-consumer and unconsumed gradients accumulate, so start them at
    // zero. Single-consumer buffers are overwritten by their consumer unless
    // that consumer lies beyond the loss node and will not run.
    for (int i = 0; i <= loss->index; ++i) {
      Node* n = nodes_[i].get();
      if (n->is_param || !n->needs_grad) continue;
      if (n->consumers != 1 || n->last_consumer > loss->index) {
        if (n->grad.empty())
          n->grad.assign(n->numel(), T(0));
        else
          std::fill(n->grad.begin(), n->grad.end(), T(0));
      }
    }
    loss->grad[0] = seed;
    for (int i = loss->index; i >= 0; --i)
      if (nodes_[i]->bwd) nodes_[i]->bwd();
  }

  void zero_param_grads() {
    for (Node* p : params_) std::fill(p->grad.begin(), p->grad.end(), T(0));
  }

  const std::vector<Node*>& params() const { return params_; }

  Node* find_param(const std::string& name) const {
    for (Node* p : params_)
      if (p->name == name) return p;
    return nullptr;
  }

  // Copies parameter values from a graph built by the same builder.
  void copy_params_from(const Graph& other) {
    if (other.params_.size() != params_.size())
      throw std::invalid_argument("copy_params_from: parameter count mismatch");
    for (size_t i = 0; i < params_.size(); ++i) {
      if (params_[i]->name != other.params_[i]->name ||
          params_[i]->numel() != other.params_[i]->numel())
        throw std::invalid_argument("copy_params_from: parameter mismatch at " +
                                    params_[i]->name);
      params_[i]->val = other.params_[i]->val;
    }
  }

  bool values_finite(Node* until = nullptr) const {
    const int stop = until ? until->index : static_cast<int>(nodes_.size()) - 1;
    for (int i = 0; i <= stop; ++i)
      for (const T& v : nodes_[i]->val)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Ew { relu, tanh, sigmoid };

  Node* add(std::string name, std::vector<int> shape) {
    auto n = std::make_unique<Node>();
    n->name = std::move(name);
    n->shape = std::move(shape);
    size_t numel = 1;
    for (int d : n->shape) {
      if (d <= 0)
        throw std::invalid_argument("graph node " + n->name +
                                    ": non-positive dim in " + shape_string(n->shape));
      numel *= static_cast<size_t>(d);
    }
    n->val.assign(numel, T(0));
    n->index = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(n));
    Node* ptr = nodes_.back().get();
    return ptr;
  }

  void consume(Node* x) {
    x->consumers++;
    x->last_consumer = static_cast<int>(nodes_.size());
    if (x->needs_grad && x->grad.empty()) x->grad.assign(x->numel(), T(0));
  }

  // Whether gradient writes into x must add to (rather than replace) the
  // existing buffer contents.
  static bool accumulate_into(const Node* x) {
    return x->is_param || x->consumers != 1;
  }

  static void axpy_or_copy(const T* src, Node* dst, size_t n) {
    if (accumulate_into(dst))
      for (size_t i = 0; i < n; ++i) dst->grad[i] += src[i];
    else
      std::memcpy(dst->grad.data(), src, n * sizeof(T));
  }

  static T norm_coord(int i, int extent) {
    return extent > 1 ? T(2) * i / (extent - 1) - T(1) : T(0);
  }

  Node* elementwise(Node* x, Ew kind) {
    consume(x);
    Node* out = add("", x->shape);
    out->needs_grad = x->needs_grad;
    const size_t n = x->numel();
    Node* xn = x;
    switch (kind) {
      case Ew::relu:
        out->fwd = [xn, out, n] {
          const T* a = xn->val.data();
          T* o = out->val.data();
#pragma omp simd
          for (size_t i = 0; i < n; ++i) o[i] = a[i] > T(0) ? a[i] : T(0);
        };
        break;
      case Ew::tanh:
        out->fwd = [xn, out, n] {
          for (size_t i = 0; i < n; ++i) out->val[i] = std::tanh(xn->val[i]);
        };
        break;
      case Ew::sigmoid:
        out->fwd = [xn, out, n] {
          for (size_t i = 0; i < n; ++i)
            out->val[i] = T(1) / (T(1) + std::exp(-xn->val[i]));
        };
        break;
    }
    if (x->needs_grad) {
      out->bwd = [xn, out, n, kind] {
        const T* g = out->grad.data();
        T* dx = xn->grad.data();
        const bool acc = accumulate_into(xn);
        switch (kind) {
          case Ew::relu: {
            const T* a = xn->val.data();
            if (acc) {
              for (size_t i = 0; i < n; ++i)
                if (a[i] > T(0)) dx[i] += g[i];
            } else {
#pragma omp simd
              for (size_t i = 0; i < n; ++i) dx[i] = a[i] > T(0) ? g[i] : T(0);
            }
            break;
          }
          case Ew::tanh: {
            const T* y = out->val.data();
            for (size_t i = 0; i < n; ++i) {
              const T d = (T(1) - y[i] * y[i]) * g[i];
              dx[i] = acc ? dx[i] + d : d;
            }
            break;
          }
          case Ew::sigmoid: {
            const T* y = out->val.data();
            for (size_t i = 0; i < n; ++i) {
              const T d = y[i] * (T(1) - y[i]) * g[i];
              dx[i] = acc ? dx[i] + d : d;
            }
            break;
          }
        }
      };
    }
    return out;
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<Node*> params_;
  int forwarded_to_ = -1;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace grasp

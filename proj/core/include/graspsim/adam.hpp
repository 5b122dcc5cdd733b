#pragma once

// ADAM optimizer with bias correction. One AdamState covers a whole
// parameter set (one moment buffer per parameter tensor, a shared step
// counter) so a network trains with a single state object.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspsim/graph.hpp"

namespace grasp {

struct AdamConfig {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig cfg{};
  long t = 0;                      // completed updates
  std::vector<std::vector<T>> m;   // first moments, one per parameter tensor
  std::vector<std::vector<T>> v;   // second moments
};

// Single-tensor update, t is the 1-based step count including this update.
template <typename T>
void adam_step_array(T* __restrict p, const T* __restrict g, T* __restrict m,
                     T* __restrict v, size_t n, long t, const AdamConfig& c) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T alpha = static_cast<T>(c.alpha), eps = static_cast<T>(c.eps);
  const T ibc1 = static_cast<T>(1.0 / bc1), ibc2 = static_cast<T>(1.0 / bc2);
  // Moments of dead units decay geometrically toward zero and would linger
  // as subnormals (slow and useless: far below eps's reach); flush them.
  constexpr T tiny = std::is_same_v<T, float> ? T(1e-30) : T(1e-290);
  for (size_t i = 0; i < n; ++i) {
    const T mi = b1 * m[i] + (T(1) - b1) * g[i];
    const T vi = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    m[i] = std::fabs(mi) < tiny ? T(0) : mi;
    v[i] = vi < tiny ? T(0) : vi;
    p[i] -= alpha * (m[i] * ibc1) / (std::sqrt(v[i] * ibc2) + eps);
  }
}

template <typename T>
AdamState<T> make_adam_state(const Graph<T>& g, AdamConfig cfg = {}) {
  AdamState<T> st;
  st.cfg = cfg;
  for (const auto* p : g.params()) {
    st.m.emplace_back(p->numel(), T(0));
    st.v.emplace_back(p->numel(), T(0));
  }
  return st;
}

// Applies one ADAM update to every parameter of the graph from the
// gradients currently accumulated in it. Non-finite gradients are rejected
// before any parameter is touched.
template <typename T>
void adam_step(Graph<T>& g, AdamState<T>& st) {
  const auto& params = g.params();
  if (st.m.size() != params.size())
    throw std::invalid_argument("adam_step: state covers " +
                                std::to_string(st.m.size()) + " tensors, graph has " +
                                std::to_string(params.size()));
  for (const auto* p : params) {
    // g * 0 is exactly 0 for finite g and NaN for inf/NaN, so the sum stays
    // 0 iff every gradient is finite; this keeps the scan vectorizable.
    T acc{};
    for (const T& gi : p->grad) acc += gi * T(0);
    if (!(acc == T(0)))
      throw std::runtime_error("adam_step: non-finite gradient in " + p->name);
  }
  st.t++;
  for (size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (st.m[i].size() != p->numel())
      throw std::invalid_argument("adam_step: moment shape mismatch at " + p->name);
    adam_step_array(p->val.data(), p->grad.data(), st.m[i].data(),
                    st.v[i].data(), p->numel(), st.t, st.cfg);
  }
}

}  // namespace grasp

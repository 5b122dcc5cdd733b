#pragma once

// Weight initialization fills. He-normal feeds ReLU layers; Xavier-uniform
// is used for output layers (the source of the convention is the controller
// design: He for hidden, Xavier for the head).

#include <cmath>

#include "graspsim/graph.hpp"
#include "graspsim/rng.hpp"

namespace grasp {

template <typename T>
void he_normal_fill(typename Graph<T>::Node* w, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& x : w->val) x = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void xavier_uniform_fill(typename Graph<T>::Node* w, int fan_in, int fan_out,
                         Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& x : w->val) x = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace grasp

#pragma once

// Closed-loop control policy network: (100x100 mask, 8-dim robot state) ->
// 8-dim action (7 joint deltas + gripper command), all tanh-limited.
//
// Vision path: conv 5x5 stride 4 (16 filters) -> conv 5x5 stride 4 (32
// filters) -> fc 800->128, ReLU after each hidden layer. State path: fc
// 8->128. The two merge by concatenation into fc 256->128 -> fc 128->8 ->
// tanh. The spatial-softmax-32 variant replaces flatten+fc on the vision
// path with a spatial softmax over the 32 feature maps (64 coordinates);
// the unsupervised-mask variant shares this architecture exactly and
// differs only in how it is trained.

#include <stdexcept>
#include <vector>

#include "graspsim/graph.hpp"
#include "graspsim/init.hpp"
#include "graspsim/rng.hpp"
#include "graspsim/tensor.hpp"

namespace grasp {

inline constexpr int kMaskSize = 100;
inline constexpr int kStateDim = 8;
inline constexpr int kActionDim = 8;

enum class ControllerVariant { seg_supervised, unsupervised_mask, spatial_softmax32 };

template <typename T>
struct ControllerHeads {
  typename Graph<T>::Node* state_in = nullptr;       // 8
  typename Graph<T>::Node* action_target = nullptr;  // 8
  typename Graph<T>::Node* action_out = nullptr;     // 8, tanh output
  typename Graph<T>::Node* loss = nullptr;           // ||a - a*||^2 (per-sample sum)
};

// Appends the controller stack to g, reading its mask from `mask` (an input
// node or the vision net's probability map). Creates the state and target
// inputs.
template <typename T>
ControllerHeads<T> build_controller(Graph<T>& g, typename Graph<T>::Node* mask,
                                    ControllerVariant variant) {
  if (mask->shape != std::vector<int>{kMaskSize, kMaskSize, 1})
    throw std::invalid_argument("controller: mask must be 100x100x1, got " +
                                shape_string(mask->shape));
  using Pad = typename Graph<T>::Pad;
  ControllerHeads<T> h;
  h.state_in = g.input("state", {kStateDim});

  auto* c1 = g.relu(g.conv2d("conv1", mask, 16, 5, 4, 1, Pad::valid));  // 24x24x16
  auto* c2 = g.relu(g.conv2d("conv2", c1, 32, 5, 4, 1, Pad::valid));    // 5x5x32
  typename Graph<T>::Node* vis = nullptr;
  if (variant == ControllerVariant::spatial_softmax32)
    vis = g.spatial_softmax(c2);                                        // 64
  else
    vis = g.relu(g.fc("fc_vision", c2, 128));                           // 800->128

  auto* st = g.relu(g.fc("fc_state", h.state_in, 128));
  auto* merged = g.relu(g.fc("fc_merge1", g.concat(vis, st), 128));
  h.action_out = g.tanh_act(g.fc("fc_out", merged, kActionDim));

  h.action_target = g.input("action_target", {kActionDim});
  h.loss = g.l2_diff(h.action_out, h.action_target);
  return h;
}

// He-normal for the ReLU layers, Xavier for fc_out, zero biases. Only fills
// parameters with controller names, so it composes with a vision subgraph.
template <typename T>
void init_controller_params(Graph<T>& g, Rng& rng) {
  for (auto* p : g.params()) {
    if (p->name == "conv1.w")
      he_normal_fill<T>(p, 5 * 5 * 1, rng);
    else if (p->name == "conv2.w")
      he_normal_fill<T>(p, 5 * 5 * 16, rng);
    else if (p->name == "fc_vision.w" || p->name == "fc_state.w" ||
             p->name == "fc_merge1.w")
      he_normal_fill<T>(p, p->dim(0), rng);
    else if (p->name == "fc_out.w")
      xavier_uniform_fill<T>(p, p->dim(0), p->dim(1), rng);
  }
}

template <typename T>
struct ControllerNet {
  Graph<T> g;
  typename Graph<T>::Node* mask_in = nullptr;  // 100x100x1
  ControllerHeads<T> heads;
  ControllerVariant variant = ControllerVariant::seg_supervised;
};

template <typename T>
ControllerNet<T> make_controller(ControllerVariant variant, Rng& rng) {
  ControllerNet<T> net;
  net.variant = variant;
  net.mask_in = net.g.input("mask", {kMaskSize, kMaskSize, 1});
  net.heads = build_controller(net.g, net.mask_in, variant);
  init_controller_params(net.g, rng);
  return net;
}

// Inference entry point; validates shapes per the interface contract.
template <typename T>
Tensor<T> controller_forward(ControllerNet<T>& net, const Tensor<T>& mask,
                             const Tensor<T>& sv) {
  if (mask.shape() != std::vector<int>{kMaskSize, kMaskSize, 1})
    throw std::invalid_argument("controller_forward: mask must be 100x100x1, got " +
                                mask.shape_string());
  if (sv.numel() != kStateDim)
    throw std::invalid_argument("controller_forward: state must have 8 entries, got " +
                                sv.shape_string());
  std::copy(mask.data(), mask.data() + mask.numel(), net.mask_in->val.begin());
  std::copy(sv.data(), sv.data() + sv.numel(), net.heads.state_in->val.begin());
  net.g.forward(net.heads.action_out);
  Tensor<T> out({kActionDim});
  std::copy(net.heads.action_out->val.begin(), net.heads.action_out->val.end(),
            out.data());
  return out;
}

}  // namespace grasp

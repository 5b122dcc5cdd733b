#pragma once

// Segmentation network: 400x400x3 RGB -> 100x100 per-pixel sphere
// probability, plus its training loop and precision/recall scoring. Five
// 5x5 same-padded convolutions with dilation 2 on the second and fourth,
// two 2x2 max pools (after convs 1 and 3) providing the x4 downsampling,
// and a sigmoid on the final single-channel logits.
//
// Channel widths and pool positions are configurable (the layer count,
// kernel size, dilation placement and pool count are fixed); the defaults
// are sized so a full training epoch stays within the experiment budgets on
// one core. ReLU is applied after pooling rather than before it — max
// commutes with any monotone map, so the result is identical and the
// activation runs at the pooled resolution.

#include <array>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspsim/adam.hpp"
#include "graspsim/graph.hpp"
#include "graspsim/init.hpp"
#include "graspsim/render.hpp"
#include "graspsim/rng.hpp"
#include "graspsim/tensor.hpp"

namespace grasp {

inline constexpr int kVisionInputSize = 400;
inline constexpr int kVisionOutputSize = 100;

struct VisionNetSpec {
  std::array<int, 5> channels{4, 8, 8, 8, 1};
  std::array<bool, 5> pool_after{true, false, true, false, false};
  int kernel = 5;

  void validate() const {
    if (channels[4] != 1)
      throw std::invalid_argument("vision: final conv must emit 1 channel");
    int pools = 0;
    for (bool p : pool_after) pools += p ? 1 : 0;
    if (pools != 2)
      throw std::invalid_argument("vision: exactly 2 pools required, got " +
                                  std::to_string(pools));
    if (kernel < 1 || kernel % 2 == 0)
      throw std::invalid_argument("vision: kernel must be odd for same padding");
  }
};

template <typename T>
struct VisionHeads {
  typename Graph<T>::Node* image_in = nullptr;     // 400x400x3
  typename Graph<T>::Node* mask_target = nullptr;  // 100x100x1
  typename Graph<T>::Node* logits = nullptr;       // 100x100x1
  typename Graph<T>::Node* prob = nullptr;         // sigmoid(logits)
  typename Graph<T>::Node* loss = nullptr;         // mean-pixel BCE
};

template <typename T>
VisionHeads<T> build_vision(Graph<T>& g, const VisionNetSpec& spec = {}) {
  spec.validate();
  using Pad = typename Graph<T>::Pad;
  VisionHeads<T> h;
  h.image_in = g.input("image", {kVisionInputSize, kVisionInputSize, 3});
  typename Graph<T>::Node* x = h.image_in;
  for (int i = 0; i < 5; ++i) {
    const int dilation = (i == 1 || i == 3) ? 2 : 1;
    x = g.conv2d("conv" + std::to_string(i + 1), x, spec.channels[i],
                 spec.kernel, 1, dilation, Pad::same);
    if (spec.pool_after[i]) x = g.maxpool2(x);
    if (i < 4) x = g.relu(x);
  }
  if (x->shape != std::vector<int>{kVisionOutputSize, kVisionOutputSize, 1})
    throw std::invalid_argument("vision: layer stack produces " +
                                shape_string(x->shape) + ", expected 100x100x1");
  h.logits = x;
  h.prob = g.sigmoid(h.logits);
  h.mask_target = g.input("mask_target", {kVisionOutputSize, kVisionOutputSize, 1});
  h.loss = g.bce_with_logits(h.logits, h.mask_target);
  return h;
}

// He-normal for the hidden convs, Xavier for the logit layer, zero biases.
template <typename T>
void init_vision_params(Graph<T>& g, const VisionNetSpec& spec, Rng& rng) {
  int in_ch = 3;
  for (int i = 0; i < 5; ++i) {
    auto* w = g.find_param("conv" + std::to_string(i + 1) + ".w");
    if (!w) continue;
    const int fan_in = spec.kernel * spec.kernel * in_ch;
    if (i < 4)
      he_normal_fill<T>(w, fan_in, rng);
    else
      xavier_uniform_fill<T>(w, fan_in, spec.kernel * spec.kernel * spec.channels[i], rng);
    in_ch = spec.channels[i];
  }
}

template <typename T>
struct VisionNet {
  Graph<T> g;
  VisionNetSpec spec;
  VisionHeads<T> heads;
};

template <typename T>
VisionNet<T> make_vision(Rng& rng, const VisionNetSpec& spec = {}) {
  VisionNet<T> net;
  net.spec = spec;
  net.heads = build_vision(net.g, spec);
  init_vision_params(net.g, spec, rng);
  return net;
}

// Inference: RGB in [0,1] -> probability map in (0,1).
template <typename T>
Tensor<T> vision_forward(VisionNet<T>& net, const Tensor<T>& img) {
  if (img.shape() != std::vector<int>{kVisionInputSize, kVisionInputSize, 3})
    throw std::invalid_argument("vision_forward: input must be 400x400x3, got " +
                                img.shape_string());
  std::copy(img.data(), img.data() + img.numel(), net.heads.image_in->val.begin());
  net.g.forward(net.heads.prob);
  Tensor<T> out({kVisionOutputSize, kVisionOutputSize, 1});
  std::copy(net.heads.prob->val.begin(), net.heads.prob->val.end(), out.data());
  return out;
}

// Mean per-pixel binary cross-entropy on probabilities (the graph trains
// from logits; this form scores an existing probability map).
template <typename T>
double seg_loss(const Tensor<T>& probabilities, const Tensor<T>& label) {
  if (!probabilities.same_shape(label))
    throw std::invalid_argument("seg_loss: shape mismatch " +
                                probabilities.shape_string() + " vs " +
                                label.shape_string());
  const double eps = 1e-12;
  double s = 0;
  for (size_t i = 0; i < probabilities.numel(); ++i) {
    const double p = std::min(std::max(static_cast<double>(probabilities[i]), eps), 1.0 - eps);
    const double y = label[i];
    s -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return s / static_cast<double>(probabilities.numel());
}

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;
  long tp = 0, fp = 0, fn = 0;
};

// Threshold 0.5; no predicted positives -> precision 1, no actual
// positives -> recall 1.
template <typename T>
PrecisionRecall precision_recall(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (!pred.same_shape(gt))
    throw std::invalid_argument("precision_recall: shape mismatch " +
                                pred.shape_string() + " vs " + gt.shape_string());
  PrecisionRecall r;
  for (size_t i = 0; i < pred.numel(); ++i) {
    const bool pp = pred[i] > T(0.5);
    const bool gp = gt[i] > T(0.5);
    if (pp && gp) r.tp++;
    else if (pp) r.fp++;
    else if (gp) r.fn++;
  }
  r.precision = (r.tp + r.fp) == 0 ? 1.0 : static_cast<double>(r.tp) / (r.tp + r.fp);
  r.recall = (r.tp + r.fn) == 0 ? 1.0 : static_cast<double>(r.tp) / (r.tp + r.fn);
  return r;
}

// ---------------------------------------------------------------------------
// dataset bridging: rendered images <-> network tensors

// RgbImage stores rows of interleaved RGB floats, exactly the row-major
// {H, W, 3} layout the graph input expects, so both bridges are flat copies.
template <typename T = float>
Tensor<T> image_tensor(const RgbImage& img) {
  Tensor<T> t({img.height, img.width, 3});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(img.px[i]);
  return t;
}

template <typename T = float>
Tensor<T> mask_tensor(const MaskImage& m) {
  Tensor<T> t({m.height, m.width, 1});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(m.px[i]);
  return t;
}

template <typename T>
struct SegExample {
  Tensor<T> image;  // 400x400x3 in [0, 1]
  Tensor<T> mask;   // 100x100x1 in {0, 1}
};

template <typename T = float>
SegExample<T> seg_example(const ImageSample& s) {
  return {image_tensor<T>(s.rgb), mask_tensor<T>(s.mask)};
}

// Loads every manifest entry of a written dataset directory.
template <typename T = float>
std::vector<SegExample<T>> load_seg_dataset(const std::filesystem::path& dir) {
  std::vector<SegExample<T>> out;
  for (const ManifestEntry& e : read_manifest(dir))
    out.push_back({image_tensor<T>(read_ppm(e.ppm)), mask_tensor<T>(read_pgm(e.pgm))});
  return out;
}

// ---------------------------------------------------------------------------
// training

struct VisionMetricRow {
  int epoch = 0;
  double loss = 0;       // mean held-out BCE
  double precision = 0;  // micro-averaged over the held-out set
  double recall = 0;
};

inline std::string vision_metrics_csv(const std::vector<VisionMetricRow>& rows) {
  std::string s = "epoch,loss,precision,recall\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.loss,
                  r.precision, r.recall);
    s += buf;
  }
  return s;
}

// Held-out scoring. Precision/recall are micro-averaged (pixel counts pooled
// across images before dividing): a per-image average would score an
// empty-mask image as precision 1 and drown out the frames that matter.
template <typename T>
VisionMetricRow eval_vision(VisionNet<T>& net,
                            const std::vector<SegExample<T>>& heldout) {
  if (heldout.empty())
    throw std::invalid_argument("eval_vision: empty held-out set");
  VisionMetricRow row;
  long tp = 0, fp = 0, fn = 0;
  for (const auto& ex : heldout) {
    const Tensor<T> prob = vision_forward(net, ex.image);
    row.loss += seg_loss(prob, ex.mask);
    const PrecisionRecall pr = precision_recall(prob, ex.mask);
    tp += pr.tp;
    fp += pr.fp;
    fn += pr.fn;
  }
  row.loss /= static_cast<double>(heldout.size());
  row.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
  row.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fn);
  return row;
}

// ADAM training over single-example steps, one pass through a shuffled
// permutation per epoch. The held-out set is scored every `eval_every`
// epochs (and at the final epoch), appending one metric row each time.
template <typename T>
std::vector<VisionMetricRow> train_vision(VisionNet<T>& net,
                                          const std::vector<SegExample<T>>& train,
                                          const std::vector<SegExample<T>>& heldout,
                                          int epochs, Rng& rng,
                                          int eval_every = 10,
                                          AdamConfig adam = {}) {
  if (train.empty()) throw std::invalid_argument("train_vision: empty training set");
  if (heldout.empty()) throw std::invalid_argument("train_vision: empty held-out set");
  if (epochs < 1) throw std::invalid_argument("train_vision: epochs must be >= 1");
  if (eval_every < 1)
    throw std::invalid_argument("train_vision: eval_every must be >= 1");

  AdamState<T> st = make_adam_state(net.g, adam);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<VisionMetricRow> history;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (size_t i : order) {
      const auto& ex = train[i];
      std::copy(ex.image.data(), ex.image.data() + ex.image.numel(),
                net.heads.image_in->val.begin());
      std::copy(ex.mask.data(), ex.mask.data() + ex.mask.numel(),
                net.heads.mask_target->val.begin());
      net.g.forward(net.heads.loss);
      net.g.zero_param_grads();
      net.g.backward(net.heads.loss);
      adam_step(net.g, st);
    }
    if (epoch % eval_every == 0 || epoch == epochs) {
      VisionMetricRow row = eval_vision(net, heldout);
      row.epoch = epoch;
      history.push_back(row);
    }
  }
  return history;
}

}  // namespace grasp

// End-to-end training-step benchmarks: one forward+backward+ADAM update
// for the segmentation net and the grasp controller.

#include <benchmark/benchmark.h>

#include "graspsim/adam.hpp"
#include "graspsim/controller.hpp"
#include "graspsim/vision.hpp"

using namespace grasp;

namespace {

void bm_vision_train_step(benchmark::State& state) {
  Rng rng(21, "bench-vis");
  auto net = make_vision<float>(rng);
  auto st = make_adam_state(net.g);
  Rng din(22, "bench-vis-in");
  for (auto& v : net.heads.image_in->val) v = static_cast<float>(din.uniform(0, 1));
  for (auto& v : net.heads.mask_target->val) v = din.bernoulli(0.1) ? 1.0f : 0.0f;
  for (auto _ : state) {
    net.g.forward(net.heads.loss);
    net.g.zero_param_grads();
    net.g.backward(net.heads.loss);
    adam_step(net.g, st);
    benchmark::DoNotOptimize(net.heads.loss->val[0]);
  }
}
BENCHMARK(bm_vision_train_step)->Unit(benchmark::kMillisecond);

void bm_controller_train_step(benchmark::State& state) {
  Rng rng(23, "bench-ctrl");
  auto net = make_controller<float>(ControllerVariant::seg_supervised, rng);
  auto st = make_adam_state(net.g);
  Rng din(24, "bench-ctrl-in");
  for (auto& v : net.mask_in->val) v = din.bernoulli(0.05) ? 1.0f : 0.0f;
  for (auto& v : net.heads.state_in->val) v = static_cast<float>(din.uniform(-1, 1));
  for (auto& v : net.heads.action_target->val) v = static_cast<float>(din.uniform(-0.5, 0.5));
  for (auto _ : state) {
    net.g.forward(net.heads.loss);
    net.g.zero_param_grads();
    net.g.backward(net.heads.loss);
    adam_step(net.g, st);
    benchmark::DoNotOptimize(net.heads.loss->val[0]);
  }
}
BENCHMARK(bm_controller_train_step)->Unit(benchmark::kMillisecond);

void bm_vision_inference(benchmark::State& state) {
  Rng rng(25, "bench-vis-inf");
  auto net = make_vision<float>(rng);
  for (auto& v : net.heads.image_in->val) v = static_cast<float>(rng.uniform(0, 1));
  for (auto _ : state) {
    net.g.forward(net.heads.prob);
    benchmark::DoNotOptimize(net.heads.prob->val[0]);
  }
}
BENCHMARK(bm_vision_inference)->Unit(benchmark::kMillisecond);

void bm_controller_inference(benchmark::State& state) {
  Rng rng(26, "bench-ctrl-inf");
  auto net = make_controller<float>(ControllerVariant::seg_supervised, rng);
  for (auto& v : net.mask_in->val) v = rng.bernoulli(0.05) ? 1.0f : 0.0f;
  for (auto& v : net.heads.state_in->val) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto _ : state) {
    net.g.forward(net.heads.action_out);
    benchmark::DoNotOptimize(net.heads.action_out->val[0]);
  }
}
BENCHMARK(bm_controller_inference)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

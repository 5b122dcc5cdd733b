// Microbenchmarks for the convolution kernels at the layer shapes the
// segmentation net and controller actually run.

#include <benchmark/benchmark.h>

#include <vector>

#include "graspsim/conv_kernels.hpp"
#include "graspsim/rng.hpp"

using namespace grasp;

namespace {

struct LayerFixture {
  kern::ConvShape s;
  std::vector<float> in, w, wt, b, out, dout, dw, db, din;

  LayerFixture(int H, int C, int F, int stride, int dil, bool same) {
    s = kern::make_conv_shape(H, H, C, 5, 5, F, stride, dil, same);
    Rng rng(17, "bench");
    auto fill = [&](std::vector<float>& v, size_t n) {
      v.resize(n);
      for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    };
    fill(in, size_t(H) * H * C);
    fill(w, size_t(25) * C * F);
    fill(b, F);
    fill(dout, size_t(s.OH) * s.OW * F);
    out.resize(dout.size());
    dw.assign(w.size(), 0.0f);
    db.assign(b.size(), 0.0f);
    din.assign(in.size(), 0.0f);
    wt.resize(w.size());
  }
};

void run_fwd(benchmark::State& state, LayerFixture& f) {
  for (auto _ : state) {
    kern::conv2d_fwd(f.s, f.in.data(), f.w.data(), f.b.data(), f.out.data());
    benchmark::DoNotOptimize(f.out.data());
  }
  const double macs = double(f.s.OH) * f.s.OW * f.s.F * 25 * f.s.C;
  state.counters["GMAC/s"] =
      benchmark::Counter(macs * state.iterations() * 1e-9, benchmark::Counter::kIsRate);
}

void run_dw(benchmark::State& state, LayerFixture& f) {
  for (auto _ : state) {
    kern::conv2d_dw(f.s, f.in.data(), f.dout.data(), f.dw.data(), f.db.data());
    benchmark::DoNotOptimize(f.dw.data());
  }
}

void run_din(benchmark::State& state, LayerFixture& f) {
  for (auto _ : state) {
    kern::conv2d_din(f.s, f.w.data(), f.dout.data(), f.din.data(), f.wt.data(),
                     /*din_untouched=*/true);
    benchmark::DoNotOptimize(f.din.data());
  }
}

#define CONV_BENCH(name, H, C, F, stride, dil, same)          \
  void bm_##name##_fwd(benchmark::State& st) {                \
    LayerFixture f(H, C, F, stride, dil, same);               \
    run_fwd(st, f);                                           \
  }                                                           \
  BENCHMARK(bm_##name##_fwd)->Unit(benchmark::kMillisecond);  \
  void bm_##name##_dw(benchmark::State& st) {                 \
    LayerFixture f(H, C, F, stride, dil, same);               \
    run_dw(st, f);                                            \
  }                                                           \
  BENCHMARK(bm_##name##_dw)->Unit(benchmark::kMillisecond);   \
  void bm_##name##_din(benchmark::State& st) {                \
    LayerFixture f(H, C, F, stride, dil, same);               \
    run_din(st, f);                                           \
  }                                                           \
  BENCHMARK(bm_##name##_din)->Unit(benchmark::kMillisecond)

CONV_BENCH(seg1_400x3x4, 400, 3, 4, 1, 1, true);
CONV_BENCH(seg2_200x4x8_d2, 200, 4, 8, 1, 2, true);
CONV_BENCH(seg3_200x8x8, 200, 8, 8, 1, 1, true);
CONV_BENCH(seg4_100x8x8_d2, 100, 8, 8, 1, 2, true);
CONV_BENCH(seg5_100x8x1, 100, 8, 1, 1, 1, true);
CONV_BENCH(ctrl1_100x1x16_s4, 100, 1, 16, 4, 1, false);
CONV_BENCH(ctrl2_24x16x32_s4, 24, 16, 32, 4, 1, false);

}  // namespace

BENCHMARK_MAIN();

// Direct 2-D convolution kernels on channels-last (H, W, C) buffers.
//
// Layouts:
//   input   in[(y * W + x) * C + c]
//   weights w[((ky * kw + kx) * C + c) * F + f]   (filter index contiguous)
//   output  out[(y * OW + x) * F + f]
//
// Every kernel comes in a reference form templated on the scalar type (used
// for float64 gradient checking and as the oracle in unit tests) and a float
// fast path dispatched by channel count. The fast paths accumulate taps in
// the same (ky, kx, c) order as the reference so forward results match the
// reference bit-for-bit; weight/input gradients block over output pixels and
// may round differently, but remain deterministic for a fixed shape.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace grasp::kern {

struct ConvShape {
  int H = 0, W = 0, C = 0;   // input
  int kh = 0, kw = 0, F = 0; // kernel
  int stride = 1, dil = 1, pad = 0;
  int OH = 0, OW = 0; // output (derived via out_size)
};

inline int conv_out_size(int in, int k, int stride, int dil, int pad) {
  const int span = dil * (k - 1) + 1;
  return (in + 2 * pad - span) / stride + 1;
}

inline ConvShape make_conv_shape(int H, int W, int C, int kh, int kw, int F,
                                 int stride, int dil, bool same_pad) {
  ConvShape s{H, W, C, kh, kw, F, stride, dil, 0, 0, 0};
  s.pad = same_pad ? (dil * (kh - 1)) / 2 : 0;
  s.OH = conv_out_size(H, kh, stride, dil, s.pad);
  s.OW = conv_out_size(W, kw, stride, dil, s.pad);
  return s;
}

// ---------------------------------------------------------------------------
// Reference kernels (any scalar type).
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_fwd_ref(const ConvShape& s, const T* in, const T* w, const T* b,
                    T* out) {
  for (int oy = 0; oy < s.OH; ++oy) {
    for (int ox = 0; ox < s.OW; ++ox) {
      T* op = out + (static_cast<size_t>(oy) * s.OW + ox) * s.F;
      for (int f = 0; f < s.F; ++f) op[f] = b ? b[f] : T(0);
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dil;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dil;
          if (ix < 0 || ix >= s.W) continue;
          const T* ip = in + (static_cast<size_t>(iy) * s.W + ix) * s.C;
          const T* wp = w + (static_cast<size_t>(ky) * s.kw + kx) * s.C * s.F;
          for (int c = 0; c < s.C; ++c)
            for (int f = 0; f < s.F; ++f) op[f] += ip[c] * wp[c * s.F + f];
        }
      }
    }
  }
}

// Accumulates into dw/db (callers zero them at batch boundaries).
template <typename T>
void conv2d_dw_ref(const ConvShape& s, const T* in, const T* dout, T* dw,
                   T* db) {
  for (int oy = 0; oy < s.OH; ++oy) {
    for (int ox = 0; ox < s.OW; ++ox) {
      const T* gp = dout + (static_cast<size_t>(oy) * s.OW + ox) * s.F;
      if (db)
        for (int f = 0; f < s.F; ++f) db[f] += gp[f];
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dil;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dil;
          if (ix < 0 || ix >= s.W) continue;
          const T* ip = in + (static_cast<size_t>(iy) * s.W + ix) * s.C;
          T* wp = dw + (static_cast<size_t>(ky) * s.kw + kx) * s.C * s.F;
          for (int c = 0; c < s.C; ++c)
            for (int f = 0; f < s.F; ++f) wp[c * s.F + f] += ip[c] * gp[f];
        }
      }
    }
  }
}

// Accumulates into din (callers zero it first).
template <typename T>
void conv2d_din_ref(const ConvShape& s, const T* w, const T* dout, T* din) {
  for (int oy = 0; oy < s.OH; ++oy) {
    for (int ox = 0; ox < s.OW; ++ox) {
      const T* gp = dout + (static_cast<size_t>(oy) * s.OW + ox) * s.F;
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dil;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dil;
          if (ix < 0 || ix >= s.W) continue;
          T* dp = din + (static_cast<size_t>(iy) * s.W + ix) * s.C;
          const T* wp = w + (static_cast<size_t>(ky) * s.kw + kx) * s.C * s.F;
          for (int c = 0; c < s.C; ++c)
            for (int f = 0; f < s.F; ++f) dp[c] += wp[c * s.F + f] * gp[f];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Float fast paths. GCC/Clang vector extensions; portable (the compiler
// lowers to whatever SIMD the target has).
// ---------------------------------------------------------------------------

namespace detail {

typedef float v16 __attribute__((vector_size(64)));
typedef float v8 __attribute__((vector_size(32)));
typedef float v4 __attribute__((vector_size(16)));

inline v16 load16(const float* p) {
  v16 r;
  std::memcpy(&r, p, 64);
  return r;
}
inline void store16(float* p, const v16& v) { std::memcpy(p, &v, 64); }
inline v8 load8(const float* p) {
  v8 r;
  std::memcpy(&r, p, 32);
  return r;
}
inline void store8(float* p, const v8& v) { std::memcpy(p, &v, 32); }
inline v4 load4(const float* p) {
  v4 r;
  std::memcpy(&r, p, 16);
  return r;
}
inline void store4(float* p, const v4& v) { std::memcpy(p, &v, 16); }

// One bounds-checked output pixel; shared by all fast paths for borders.
template <int F>
void fwd_px(const ConvShape& s, const float* in, const float* w,
            const float* b, float* op, int oy, int ox) {
  float acc[F];
  for (int f = 0; f < F; ++f) acc[f] = b ? b[f] : 0.f;
  for (int ky = 0; ky < s.kh; ++ky) {
    const int iy = oy * s.stride - s.pad + ky * s.dil;
    if (iy < 0 || iy >= s.H) continue;
    for (int kx = 0; kx < s.kw; ++kx) {
      const int ix = ox * s.stride - s.pad + kx * s.dil;
      if (ix < 0 || ix >= s.W) continue;
      const float* ip = in + (static_cast<size_t>(iy) * s.W + ix) * s.C;
      const float* wp = w + (static_cast<size_t>(ky) * s.kw + kx) * s.C * F;
      for (int c = 0; c < s.C; ++c) {
        const float v = ip[c];
#pragma omp simd
        for (int f = 0; f < F; ++f) acc[f] += v * wp[c * F + f];
      }
    }
  }
  for (int f = 0; f < F; ++f) op[f] = acc[f];
}

// Interior x-range [lo, hi): every kernel tap lands inside the input row.
inline void interior_x(const ConvShape& s, int& lo, int& hi) {
  lo = 0;
  while (lo < s.OW && lo * s.stride - s.pad < 0) ++lo;
  hi = s.OW;
  while (hi > lo && (hi - 1) * s.stride - s.pad + (s.kw - 1) * s.dil >= s.W)
    --hi;
}

// Forward, F a multiple of 16, PB output pixels per block. CT > 0 bakes the
// channel count in at compile time (fully unrolled for small inputs).
template <int F, int PB, int CT = 0>
void fwd16(const ConvShape& s, const float* __restrict in,
           const float* __restrict w, const float* __restrict b,
           float* __restrict out) {
  constexpr int NV = F / 16;
  const int C = CT > 0 ? CT : s.C;
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy * s.stride - s.pad;
    const bool yin = iy0 >= 0 && iy0 + (s.kh - 1) * s.dil < s.H;
    float* orow = out + static_cast<size_t>(oy) * s.OW * F;
    int ox = 0;
    if (yin) {
      for (; ox < lo; ++ox) fwd_px<F>(s, in, w, b, orow + ox * F, oy, ox);
      for (; ox + PB <= hi; ox += PB) {
        v16 acc[PB][NV];
        for (int p = 0; p < PB; ++p)
          for (int nv = 0; nv < NV; ++nv)
            acc[p][nv] = b ? load16(b + nv * 16) : v16{};
        for (int ky = 0; ky < s.kh; ++ky) {
          const float* __restrict irow =
              in + (static_cast<size_t>(iy0) + static_cast<size_t>(ky) * s.dil) *
                       s.W * C;
          for (int kx = 0; kx < s.kw; ++kx) {
            const float* __restrict ip =
                irow + (static_cast<size_t>(ox) * s.stride - s.pad +
                        static_cast<size_t>(kx) * s.dil) *
                           C;
            const float* __restrict wp =
                w + (static_cast<size_t>(ky) * s.kw + kx) * C * F;
            for (int c = 0; c < C; ++c) {
              for (int nv = 0; nv < NV; ++nv) {
                const v16 wv = load16(wp + c * F + nv * 16);
                for (int p = 0; p < PB; ++p)
                  acc[p][nv] +=
                      ip[c + static_cast<size_t>(p) * s.stride * C] * wv;
              }
            }
          }
        }
        for (int p = 0; p < PB; ++p)
          for (int nv = 0; nv < NV; ++nv)
            store16(orow + (ox + p) * F + nv * 16, acc[p][nv]);
      }
    }
    for (; ox < s.OW; ++ox) fwd_px<F>(s, in, w, b, orow + ox * F, oy, ox);
  }
}

// Forward, F == 8.
template <int PB, int CT = 0>
void fwd8(const ConvShape& s, const float* __restrict in,
          const float* __restrict w, const float* __restrict b,
          float* __restrict out) {
  constexpr int F = 8;
  const int C = CT > 0 ? CT : s.C;
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy * s.stride - s.pad;
    const bool yin = iy0 >= 0 && iy0 + (s.kh - 1) * s.dil < s.H;
    float* orow = out + static_cast<size_t>(oy) * s.OW * F;
    int ox = 0;
    if (yin) {
      for (; ox < lo; ++ox) fwd_px<F>(s, in, w, b, orow + ox * F, oy, ox);
      for (; ox + PB <= hi; ox += PB) {
        v8 acc[PB];
        for (int p = 0; p < PB; ++p) acc[p] = b ? load8(b) : v8{};
        for (int ky = 0; ky < s.kh; ++ky) {
          const float* __restrict irow =
              in + (static_cast<size_t>(iy0) + static_cast<size_t>(ky) * s.dil) *
                       s.W * C;
          for (int kx = 0; kx < s.kw; ++kx) {
            const float* __restrict ip =
                irow + (static_cast<size_t>(ox) * s.stride - s.pad +
                        static_cast<size_t>(kx) * s.dil) *
                           C;
            const float* __restrict wp =
                w + (static_cast<size_t>(ky) * s.kw + kx) * C * F;
            for (int c = 0; c < C; ++c) {
              const v8 wv = load8(wp + c * F);
              for (int p = 0; p < PB; ++p)
                acc[p] += ip[c + static_cast<size_t>(p) * s.stride * C] * wv;
            }
          }
        }
        for (int p = 0; p < PB; ++p) store8(orow + (ox + p) * F, acc[p]);
      }
    }
    for (; ox < s.OW; ++ox) fwd_px<F>(s, in, w, b, orow + ox * F, oy, ox);
  }
}

// Forward, F == 4.
template <int PB, int CT = 0>
void fwd4(const ConvShape& s, const float* __restrict in,
          const float* __restrict w, const float* __restrict b,
          float* __restrict out) {
  constexpr int F = 4;
  const int C = CT > 0 ? CT : s.C;
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy * s.stride - s.pad;
    const bool yin = iy0 >= 0 && iy0 + (s.kh - 1) * s.dil < s.H;
    float* orow = out + static_cast<size_t>(oy) * s.OW * F;
    int ox = 0;
    if (yin) {
      for (; ox < lo; ++ox) fwd_px<F>(s, in, w, b, orow + ox * F, oy, ox);
      for (; ox + PB <= hi; ox += PB) {
        v4 acc[PB];
        for (int p = 0; p < PB; ++p) acc[p] = b ? load4(b) : v4{};
        for (int ky = 0; ky < s.kh; ++ky) {
          const float* __restrict irow =
              in + (static_cast<size_t>(iy0) + static_cast<size_t>(ky) * s.dil) *
                       s.W * C;
          for (int kx = 0; kx < s.kw; ++kx) {
            const float* __restrict ip =
                irow + (static_cast<size_t>(ox) * s.stride - s.pad +
                        static_cast<size_t>(kx) * s.dil) *
                           C;
            const float* __restrict wp =
                w + (static_cast<size_t>(ky) * s.kw + kx) * C * F;
            for (int c = 0; c < C; ++c) {
              const v4 wv = load4(wp + c * F);
              for (int p = 0; p < PB; ++p)
                acc[p] += ip[c + static_cast<size_t>(p) * s.stride * C] * wv;
            }
          }
        }
        for (int p = 0; p < PB; ++p) store4(orow + (ox + p) * F, acc[p]);
      }
    }
    for (; ox < s.OW; ++ox) fwd_px<F>(s, in, w, b, orow + ox * F, oy, ox);
  }
}

// Forward for the 3-channel stride-1 dilation-1 5x5 input layer. The RGB
// input is deinterleaved once into per-channel planes; 16 consecutive output
// pixels then accumulate in one v16 register per filter, with each weight
// broadcast from memory, so no horizontal reductions are needed. Plane rows
// are contiguous, making every tap a plain unaligned 16-float load.
template <int F>
void fwd_rgb5x5(const ConvShape& s, const float* __restrict in,
                const float* __restrict w, const float* __restrict b,
                float* __restrict out) {
  const size_t plane = static_cast<size_t>(s.H) * s.W;
  thread_local std::vector<float> planes;
  planes.resize(3 * plane + 16);
  float* __restrict p0 = planes.data();
  float* __restrict p1 = p0 + plane;
  float* __restrict p2 = p1 + plane;
  for (size_t i = 0; i < plane; ++i) {
    p0[i] = in[i * 3 + 0];
    p1[i] = in[i * 3 + 1];
    p2[i] = in[i * 3 + 2];
  }
  const float* const pl[3] = {p0, p1, p2};
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy - s.pad;
    float* orow = out + static_cast<size_t>(oy) * s.OW * F;
    int ox = 0;
    for (; ox < lo; ++ox) fwd_px<F>(s, in, w, b, orow + ox * F, oy, ox);
    for (; ox + 16 <= hi; ox += 16) {
      v16 acc[F];
      for (int f = 0; f < F; ++f) acc[f] = b ? b[f] - v16{} : v16{};
      for (int ky = 0; ky < 5; ++ky) {
        const int iy = iy0 + ky;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < 5; ++kx) {
          const size_t off = static_cast<size_t>(iy) * s.W + ox - s.pad + kx;
          const float* __restrict wp = w + (static_cast<size_t>(ky) * 5 + kx) * 3 * F;
          for (int c = 0; c < 3; ++c) {
            const v16 iv = load16(pl[c] + off);
            for (int f = 0; f < F; ++f) acc[f] += wp[c * F + f] * iv;
          }
        }
      }
      float t[F][16];
      for (int f = 0; f < F; ++f) store16(t[f], acc[f]);
      for (int j = 0; j < 16; ++j)
        for (int f = 0; f < F; ++f) orow[(ox + j) * F + f] = t[f][j];
    }
    for (; ox < s.OW; ++ox) fwd_px<F>(s, in, w, b, orow + ox * F, oy, ox);
  }
}

// Weight gradient matching fwd_rgb5x5: per-row strip accumulators live in
// registers and are scattered into the dw layout once at the end.
template <int F>
void dw_rgb5x5(const ConvShape& s, const float* __restrict in,
               const float* __restrict dout, float* __restrict dw,
               float* __restrict db) {
  v16 acc[F][5] = {};
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy - s.pad;
    const float* grow = dout + static_cast<size_t>(oy) * s.OW * F;
    if (db) {
      for (int ox = 0; ox < s.OW; ++ox)
#pragma omp simd
        for (int f = 0; f < F; ++f) db[f] += grow[ox * F + f];
    }
    auto scalar_px = [&](int ox) {
      const float* gp = grow + ox * F;
      for (int ky = 0; ky < 5; ++ky) {
        const int iy = iy0 + ky;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < 5; ++kx) {
          const int ix = ox - s.pad + kx;
          if (ix < 0 || ix >= s.W) continue;
          const float* ip = in + (static_cast<size_t>(iy) * s.W + ix) * 3;
          float* wp = dw + (static_cast<size_t>(ky) * 5 + kx) * 3 * F;
          for (int c = 0; c < 3; ++c)
#pragma omp simd
            for (int f = 0; f < F; ++f) wp[c * F + f] += ip[c] * gp[f];
        }
      }
    };
    const int hi_row = (iy0 + 4 >= s.H - 1) ? std::max(lo, hi - 1) : hi;
    int ox = 0;
    for (; ox < lo; ++ox) scalar_px(ox);
    for (; ox < hi_row; ++ox) {
      const float* gp = grow + ox * F;
      for (int ky = 0; ky < 5; ++ky) {
        const int iy = iy0 + ky;
        if (iy < 0 || iy >= s.H) continue;
        const v16 iv = load16(in + (static_cast<size_t>(iy) * s.W + ox - s.pad) * 3);
        for (int f = 0; f < F; ++f) acc[f][ky] += gp[f] * iv;
      }
    }
    for (; ox < s.OW; ++ox) scalar_px(ox);
  }
  for (int f = 0; f < F; ++f)
    for (int ky = 0; ky < 5; ++ky) {
      float t[16];
      store16(t, acc[f][ky]);
      for (int kx = 0; kx < 5; ++kx)
        for (int c = 0; c < 3; ++c)
          dw[(static_cast<size_t>(ky) * 5 + kx) * 3 * F + c * F + f] += t[kx * 3 + c];
    }
}

// Forward, F == 1, C == 8 or a multiple of 16: one dot per output pixel.
template <int CC>
void fwd_f1(const ConvShape& s, const float* __restrict in,
            const float* __restrict w, const float* __restrict b,
            float* __restrict out) {
  static_assert(CC == 8 || CC % 16 == 0);
  constexpr int NV = (CC % 16 == 0) ? CC / 16 : 1;
  constexpr int VL = (CC % 16 == 0) ? 16 : 8;
  using V = std::conditional_t<CC % 16 == 0, v16, v8>;
  for (int oy = 0; oy < s.OH; ++oy) {
    for (int ox = 0; ox < s.OW; ++ox) {
      V vacc{};
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dil;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dil;
          if (ix < 0 || ix >= s.W) continue;
          const float* __restrict ip =
              in + (static_cast<size_t>(iy) * s.W + ix) * CC;
          const float* __restrict wp =
              w + (static_cast<size_t>(ky) * s.kw + kx) * CC;
          for (int nv = 0; nv < NV; ++nv) {
            if constexpr (CC % 16 == 0)
              vacc += load16(ip + nv * VL) * load16(wp + nv * VL);
            else
              vacc += load8(ip) * load8(wp);
          }
        }
      }
      float sum = b ? b[0] : 0.f;
      for (int i = 0; i < VL; ++i) sum += vacc[i];
      out[static_cast<size_t>(oy) * s.OW + ox] = sum;
    }
  }
}

// Weight gradient, F a multiple of 16, PB-pixel register accumulation.
template <int F, int PB>
void dw16(const ConvShape& s, const float* __restrict in,
          const float* __restrict dout, float* __restrict dw,
          float* __restrict db) {
  constexpr int NV = F / 16;
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy * s.stride - s.pad;
    const bool yin = iy0 >= 0 && iy0 + (s.kh - 1) * s.dil < s.H;
    const float* grow = dout + static_cast<size_t>(oy) * s.OW * F;
    if (db) {
      for (int ox = 0; ox < s.OW; ++ox)
#pragma omp simd
        for (int f = 0; f < F; ++f) db[f] += grow[ox * F + f];
    }
    auto scalar_px = [&](int ox) {
      const float* gp = grow + ox * F;
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dil;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dil;
          if (ix < 0 || ix >= s.W) continue;
          const float* ip = in + (static_cast<size_t>(iy) * s.W + ix) * s.C;
          float* wp = dw + (static_cast<size_t>(ky) * s.kw + kx) * s.C * F;
          for (int c = 0; c < s.C; ++c) {
            const float v = ip[c];
#pragma omp simd
            for (int f = 0; f < F; ++f) wp[c * F + f] += v * gp[f];
          }
        }
      }
    };
    int ox = 0;
    if (yin) {
      for (; ox < lo; ++ox) scalar_px(ox);
      for (; ox + PB <= hi; ox += PB) {
        v16 g[PB][NV];
        for (int p = 0; p < PB; ++p)
          for (int nv = 0; nv < NV; ++nv)
            g[p][nv] = load16(grow + (ox + p) * F + nv * 16);
        for (int ky = 0; ky < s.kh; ++ky) {
          const float* __restrict irow =
              in + (static_cast<size_t>(iy0) + static_cast<size_t>(ky) * s.dil) *
                       s.W * s.C;
          for (int kx = 0; kx < s.kw; ++kx) {
            const float* __restrict ip =
                irow + (static_cast<size_t>(ox) * s.stride - s.pad +
                        static_cast<size_t>(kx) * s.dil) *
                           s.C;
            float* __restrict wp =
                dw + (static_cast<size_t>(ky) * s.kw + kx) * s.C * F;
            for (int c = 0; c < s.C; ++c) {
              for (int nv = 0; nv < NV; ++nv) {
                v16 acc = ip[c] * g[0][nv];
                for (int p = 1; p < PB; ++p)
                  acc += ip[c + static_cast<size_t>(p) * s.stride * s.C] *
                         g[p][nv];
                store16(wp + c * F + nv * 16,
                        load16(wp + c * F + nv * 16) + acc);
              }
            }
          }
        }
      }
    }
    for (; ox < s.OW; ++ox) scalar_px(ox);
  }
}

// Weight gradient, F == 8.
template <int PB>
void dw8(const ConvShape& s, const float* __restrict in,
         const float* __restrict dout, float* __restrict dw,
         float* __restrict db) {
  constexpr int F = 8;
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy * s.stride - s.pad;
    const bool yin = iy0 >= 0 && iy0 + (s.kh - 1) * s.dil < s.H;
    const float* grow = dout + static_cast<size_t>(oy) * s.OW * F;
    if (db) {
      for (int ox = 0; ox < s.OW; ++ox)
#pragma omp simd
        for (int f = 0; f < F; ++f) db[f] += grow[ox * F + f];
    }
    auto scalar_px = [&](int ox) {
      const float* gp = grow + ox * F;
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dil;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dil;
          if (ix < 0 || ix >= s.W) continue;
          const float* ip = in + (static_cast<size_t>(iy) * s.W + ix) * s.C;
          float* wp = dw + (static_cast<size_t>(ky) * s.kw + kx) * s.C * F;
          for (int c = 0; c < s.C; ++c) {
            const float v = ip[c];
#pragma omp simd
            for (int f = 0; f < F; ++f) wp[c * F + f] += v * gp[f];
          }
        }
      }
    };
    int ox = 0;
    if (yin) {
      for (; ox < lo; ++ox) scalar_px(ox);
      for (; ox + PB <= hi; ox += PB) {
        v8 g[PB];
        for (int p = 0; p < PB; ++p) g[p] = load8(grow + (ox + p) * F);
        for (int ky = 0; ky < s.kh; ++ky) {
          const float* __restrict irow =
              in + (static_cast<size_t>(iy0) + static_cast<size_t>(ky) * s.dil) *
                       s.W * s.C;
          for (int kx = 0; kx < s.kw; ++kx) {
            const float* __restrict ip =
                irow + (static_cast<size_t>(ox) * s.stride - s.pad +
                        static_cast<size_t>(kx) * s.dil) *
                           s.C;
            float* __restrict wp =
                dw + (static_cast<size_t>(ky) * s.kw + kx) * s.C * F;
            for (int c = 0; c < s.C; ++c) {
              v8 acc = ip[c] * g[0];
              for (int p = 1; p < PB; ++p)
                acc += ip[c + static_cast<size_t>(p) * s.stride * s.C] * g[p];
              store8(wp + c * F, load8(wp + c * F) + acc);
            }
          }
        }
      }
    }
    for (; ox < s.OW; ++ox) scalar_px(ox);
  }
}

// Weight gradient, F == 4.
template <int PB>
void dw4(const ConvShape& s, const float* __restrict in,
         const float* __restrict dout, float* __restrict dw,
         float* __restrict db) {
  constexpr int F = 4;
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy * s.stride - s.pad;
    const bool yin = iy0 >= 0 && iy0 + (s.kh - 1) * s.dil < s.H;
    const float* grow = dout + static_cast<size_t>(oy) * s.OW * F;
    if (db) {
      for (int ox = 0; ox < s.OW; ++ox)
#pragma omp simd
        for (int f = 0; f < F; ++f) db[f] += grow[ox * F + f];
    }
    auto scalar_px = [&](int ox) {
      const float* gp = grow + ox * F;
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dil;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dil;
          if (ix < 0 || ix >= s.W) continue;
          const float* ip = in + (static_cast<size_t>(iy) * s.W + ix) * s.C;
          float* wp = dw + (static_cast<size_t>(ky) * s.kw + kx) * s.C * F;
          for (int c = 0; c < s.C; ++c) {
            const float v = ip[c];
#pragma omp simd
            for (int f = 0; f < F; ++f) wp[c * F + f] += v * gp[f];
          }
        }
      }
    };
    int ox = 0;
    if (yin) {
      for (; ox < lo; ++ox) scalar_px(ox);
      for (; ox + PB <= hi; ox += PB) {
        v4 g[PB];
        for (int p = 0; p < PB; ++p) g[p] = load4(grow + (ox + p) * F);
        for (int ky = 0; ky < s.kh; ++ky) {
          const float* __restrict irow =
              in + (static_cast<size_t>(iy0) + static_cast<size_t>(ky) * s.dil) *
                       s.W * s.C;
          for (int kx = 0; kx < s.kw; ++kx) {
            const float* __restrict ip =
                irow + (static_cast<size_t>(ox) * s.stride - s.pad +
                        static_cast<size_t>(kx) * s.dil) *
                           s.C;
            float* __restrict wp =
                dw + (static_cast<size_t>(ky) * s.kw + kx) * s.C * F;
            for (int c = 0; c < s.C; ++c) {
              v4 acc = ip[c] * g[0];
              for (int p = 1; p < PB; ++p)
                acc += ip[c + static_cast<size_t>(p) * s.stride * s.C] * g[p];
              store4(wp + c * F, load4(wp + c * F) + acc);
            }
          }
        }
      }
    }
    for (; ox < s.OW; ++ox) scalar_px(ox);
  }
}

// Input gradient for one output pixel, bounds-checked; wt is the transposed
// weight layout wt[((ky*kw+kx)*F + f)*C + c].
template <typename T>
void din_px(const ConvShape& s, const T* wt, const T* gp, T* din, int oy,
            int ox) {
  for (int ky = 0; ky < s.kh; ++ky) {
    const int iy = oy * s.stride - s.pad + ky * s.dil;
    if (iy < 0 || iy >= s.H) continue;
    for (int kx = 0; kx < s.kw; ++kx) {
      const int ix = ox * s.stride - s.pad + kx * s.dil;
      if (ix < 0 || ix >= s.W) continue;
      T* dp = din + (static_cast<size_t>(iy) * s.W + ix) * s.C;
      const T* wp = wt + (static_cast<size_t>(ky) * s.kw + kx) * s.F * s.C;
      for (int f = 0; f < s.F; ++f) {
        const T g = gp[f];
#pragma omp simd
        for (int c = 0; c < s.C; ++c) dp[c] += g * wp[f * s.C + c];
      }
    }
  }
}

// Input gradient. Interior output pixels are processed in pairs sharing the
// weight loads, with the filter loop split into four accumulator chains to
// hide FMA latency. CC is the channel count (8 or a multiple of 16).
template <int CC>
void din_c(const ConvShape& s, const float* __restrict wt,
           const float* __restrict dout, float* __restrict din) {
  static_assert(CC == 8 || CC % 16 == 0);
  constexpr int NV = (CC % 16 == 0) ? CC / 16 : 1;
  constexpr int VL = (CC % 16 == 0) ? 16 : 8;
  using V = std::conditional_t<CC % 16 == 0, v16, v8>;
  auto load = [](const float* p) {
    if constexpr (CC % 16 == 0) return load16(p); else return load8(p);
  };
  auto store = [](float* p, const V& v) {
    if constexpr (CC % 16 == 0) store16(p, v); else store8(p, v);
  };
  const int F = s.F;
  int lo, hi;
  interior_x(s, lo, hi);
  for (int oy = 0; oy < s.OH; ++oy) {
    const int iy0 = oy * s.stride - s.pad;
    const bool yin = iy0 >= 0 && iy0 + (s.kh - 1) * s.dil < s.H;
    const float* grow = dout + static_cast<size_t>(oy) * s.OW * F;
    int ox = 0;
    if (yin && F % 4 == 0) {
      for (; ox < lo; ++ox) din_px(s, wt, grow + ox * F, din, oy, ox);
      for (; ox + 2 <= hi; ox += 2) {
        const float* __restrict g0 = grow + ox * F;
        const float* __restrict g1 = g0 + F;
        for (int ky = 0; ky < s.kh; ++ky) {
          const int iy = iy0 + ky * s.dil;
          float* __restrict drow = din + static_cast<size_t>(iy) * s.W * CC;
          for (int kx = 0; kx < s.kw; ++kx) {
            const size_t ix = static_cast<size_t>(ox) * s.stride - s.pad +
                              static_cast<size_t>(kx) * s.dil;
            float* __restrict dp0 = drow + ix * CC;
            float* __restrict dp1 = dp0 + static_cast<size_t>(s.stride) * CC;
            const float* __restrict wp =
                wt + (static_cast<size_t>(ky) * s.kw + kx) * F * CC;
            for (int nv = 0; nv < NV; ++nv) {
              V a0{}, a1{}, a2{}, a3{}, b0{}, b1{}, b2{}, b3{};
              for (int f = 0; f < F; f += 4) {
                const V w0 = load(wp + (f + 0) * CC + nv * VL);
                const V w1 = load(wp + (f + 1) * CC + nv * VL);
                const V w2 = load(wp + (f + 2) * CC + nv * VL);
                const V w3 = load(wp + (f + 3) * CC + nv * VL);
                a0 += g0[f + 0] * w0; b0 += g1[f + 0] * w0;
                a1 += g0[f + 1] * w1; b1 += g1[f + 1] * w1;
                a2 += g0[f + 2] * w2; b2 += g1[f + 2] * w2;
                a3 += g0[f + 3] * w3; b3 += g1[f + 3] * w3;
              }
              store(dp0 + nv * VL,
                    load(dp0 + nv * VL) + ((a0 + a1) + (a2 + a3)));
              store(dp1 + nv * VL,
                    load(dp1 + nv * VL) + ((b0 + b1) + (b2 + b3)));
            }
          }
        }
      }
    }
    for (; ox < s.OW; ++ox) din_px(s, wt, grow + ox * F, din, oy, ox);
  }
}

// Weight gradient for F == 1, vectorized over channels. Skips zero-gradient
// output pixels (common when the downstream consumer is sparse).
template <int CC>
void dw_f1(const ConvShape& s, const float* __restrict in,
           const float* __restrict dout, float* __restrict dw,
           float* __restrict db) {
  static_assert(CC == 8 || CC % 16 == 0);
  constexpr int NV = (CC % 16 == 0) ? CC / 16 : 1;
  for (int oy = 0; oy < s.OH; ++oy) {
    for (int ox = 0; ox < s.OW; ++ox) {
      const float g = dout[static_cast<size_t>(oy) * s.OW + ox];
      if (db) db[0] += g;
      if (g == 0.f) continue;
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dil;
        if (iy < 0 || iy >= s.H) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dil;
          if (ix < 0 || ix >= s.W) continue;
          const float* __restrict ip =
              in + (static_cast<size_t>(iy) * s.W + ix) * CC;
          float* __restrict wp =
              dw + (static_cast<size_t>(ky) * s.kw + kx) * CC;
          for (int nv = 0; nv < NV; ++nv) {
            if constexpr (CC % 16 == 0)
              store16(wp + nv * 16,
                      load16(wp + nv * 16) + g * load16(ip + nv * 16));
            else
              store8(wp, load8(wp) + g * load8(ip));
          }
        }
      }
    }
  }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dispatchers. Fall back to the reference loops for unsupported widths.
// ---------------------------------------------------------------------------

inline void conv2d_fwd(const ConvShape& s, const float* in, const float* w,
                       const float* b, float* out) {
  using namespace detail;
  switch (s.F) {
    case 4:
      if (s.C == 3 && s.kh == 5 && s.kw == 5 && s.stride == 1 && s.dil == 1)
        fwd_rgb5x5<4>(s, in, w, b, out);
      else if (s.C == 3)
        fwd4<8, 3>(s, in, w, b, out);
      else
        fwd4<8>(s, in, w, b, out);
      return;
    case 8:
      if (s.C == 3) fwd8<8, 3>(s, in, w, b, out);
      else fwd8<8>(s, in, w, b, out);
      return;
    case 16:
      if (s.C == 3) fwd16<16, 6, 3>(s, in, w, b, out);
      else fwd16<16, 6>(s, in, w, b, out);
      return;
    case 32: fwd16<32, 4>(s, in, w, b, out); return;
    case 1:
      switch (s.C) {
        case 8: fwd_f1<8>(s, in, w, b, out); return;
        case 16: fwd_f1<16>(s, in, w, b, out); return;
        case 32: fwd_f1<32>(s, in, w, b, out); return;
        default: break;
      }
      break;
    default: break;
  }
  conv2d_fwd_ref(s, in, w, b, out);
}

inline void conv2d_dw(const ConvShape& s, const float* in, const float* dout,
                      float* dw, float* db) {
  using namespace detail;
  switch (s.F) {
    case 4:
      if (s.C == 3 && s.kh == 5 && s.kw == 5 && s.stride == 1 && s.dil == 1)
        dw_rgb5x5<4>(s, in, dout, dw, db);
      else
        dw4<8>(s, in, dout, dw, db);
      return;
    case 8: dw8<8>(s, in, dout, dw, db); return;
    case 16: dw16<16, 6>(s, in, dout, dw, db); return;
    case 32: dw16<32, 4>(s, in, dout, dw, db); return;
    case 1:
      switch (s.C) {
        case 8: dw_f1<8>(s, in, dout, dw, db); return;
        case 16: dw_f1<16>(s, in, dout, dw, db); return;
        case 32: dw_f1<32>(s, in, dout, dw, db); return;
        default: break;
      }
      break;
    default: break;
  }
  conv2d_dw_ref(s, in, dout, dw, db);
}

// Transposes w[(tap*C + c)*F + f] into wt[(tap*F + f)*C + c]; flip reverses
// the tap order (180-degree kernel rotation).
inline void transpose_weights(const ConvShape& s, const float* w, float* wt,
                              bool flip) {
  const int taps = s.kh * s.kw;
  for (int tap = 0; tap < taps; ++tap) {
    const int dst = flip ? taps - 1 - tap : tap;
    for (int c = 0; c < s.C; ++c)
      for (int f = 0; f < s.F; ++f)
        wt[(static_cast<size_t>(dst) * s.F + f) * s.C + c] =
            w[(static_cast<size_t>(tap) * s.C + c) * s.F + f];
  }
}

// Input gradient; wt_scratch holds kh*kw*C*F floats. With din_untouched the
// caller promises din holds nothing of value: the kernel is free to
// overwrite it and leaves it holding exactly this convolution's gradient.
// Without it the gradient is accumulated on top of the existing contents.
//
// Untouched stride-1 convolutions take the gather form: the input gradient
// is itself a convolution of dout with the tap-flipped, channel-transposed
// kernel at padding (k-1)*dil - pad, which accumulates in registers instead
// of read-modify-writing din rows. Other cases zero din as needed and use a
// scatter kernel.
inline void conv2d_din(const ConvShape& s, const float* w, const float* dout,
                       float* din, float* wt_scratch,
                       bool din_untouched = true) {
  using namespace detail;
  if (din_untouched && s.stride == 1 &&
      (s.C == 4 || s.C == 8 || s.C == 16 || s.C == 32 ||
       (s.C == 1 && s.F % 16 == 0))) {
    ConvShape g;
    g.H = s.OH; g.W = s.OW; g.C = s.F;
    g.kh = s.kh; g.kw = s.kw; g.F = s.C;
    g.stride = 1; g.dil = s.dil;
    g.pad = s.dil * (s.kh - 1) - s.pad;
    g.OH = conv_out_size(g.H, g.kh, 1, g.dil, g.pad);
    g.OW = conv_out_size(g.W, g.kw, 1, g.dil, g.pad);
    if (g.OH == s.H && g.OW == s.W && g.pad >= 0) {
      transpose_weights(s, w, wt_scratch, /*flip=*/true);
      conv2d_fwd(g, dout, wt_scratch, nullptr, din);
      return;
    }
  }
  if (din_untouched)
    std::memset(din, 0, static_cast<size_t>(s.H) * s.W * s.C * sizeof(float));
  if (s.C == 8 || s.C % 16 == 0) {
    transpose_weights(s, w, wt_scratch, /*flip=*/false);
    switch (s.C) {
      case 8: din_c<8>(s, wt_scratch, dout, din); return;
      case 16: din_c<16>(s, wt_scratch, dout, din); return;
      case 32: din_c<32>(s, wt_scratch, dout, din); return;
      default: break;
    }
  }
  conv2d_din_ref(s, w, dout, din);
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 max pooling (channels-last). Ties resolve to the first
// element in row-major window order. Odd trailing rows/cols are dropped.
// ---------------------------------------------------------------------------

template <typename T>
void maxpool2_fwd(int H, int W, int C, const T* in, T* out, int* argmax) {
  const int OH = H / 2, OW = W / 2;
  for (int oy = 0; oy < OH; ++oy) {
    for (int ox = 0; ox < OW; ++ox) {
      T* op = out + (static_cast<size_t>(oy) * OW + ox) * C;
      int* ap = argmax + (static_cast<size_t>(oy) * OW + ox) * C;
      for (int c = 0; c < C; ++c) {
        T best{};
        int besti = -1;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = oy * 2 + dy, ix = ox * 2 + dx;
            const size_t idx = (static_cast<size_t>(iy) * W + ix) * C + c;
            if (besti < 0 || in[idx] > best) {
              best = in[idx];
              besti = static_cast<int>(idx);
            }
          }
        }
        op[c] = best;
        ap[c] = besti;
      }
    }
  }
}

template <typename T>
void maxpool2_bwd(int OH, int OW, int C, const T* dout, const int* argmax,
                  T* din) {
  const size_t n = static_cast<size_t>(OH) * OW * C;
  for (size_t i = 0; i < n; ++i) din[argmax[i]] += dout[i];
}

// Overwriting variant: fills every din cell (routed gradient or zero), so
// the caller does not need to pre-zero the buffer.
template <typename T>
void maxpool2_bwd_dense(int H, int W, int C, const T* dout, const int* argmax,
                        T* din) {
  const int OH = H / 2, OW = W / 2;
  if (H % 2 != 0 || W % 2 != 0) {
    std::fill(din, din + static_cast<size_t>(H) * W * C, T(0));
    maxpool2_bwd(OH, OW, C, dout, argmax, din);
    return;
  }
  for (int oy = 0; oy < OH; ++oy) {
    for (int ox = 0; ox < OW; ++ox) {
      for (int dy = 0; dy < 2; ++dy) {
        T* row = din + (static_cast<size_t>(oy * 2 + dy) * W + ox * 2) * C;
        std::fill(row, row + 2 * C, T(0));
      }
      const size_t o = (static_cast<size_t>(oy) * OW + ox) * C;
      for (int c = 0; c < C; ++c) din[argmax[o + c]] = dout[o + c];
    }
  }
}

// General windowed max pooling, naive form. Serves as the oracle for the
// 2x2 fast path and handles arbitrary window/stride; ties resolve to the
// first element in row-major window order and trailing partial windows are
// dropped, matching maxpool2_fwd.
template <typename T>
void maxpool_fwd_ref(int H, int W, int C, int window, int stride, const T* in,
                     T* out, int* argmax) {
  const int OH = (H - window) / stride + 1;
  const int OW = (W - window) / stride + 1;
  for (int oy = 0; oy < OH; ++oy) {
    for (int ox = 0; ox < OW; ++ox) {
      for (int c = 0; c < C; ++c) {
        T best{};
        int besti = -1;
        for (int dy = 0; dy < window; ++dy) {
          for (int dx = 0; dx < window; ++dx) {
            const int iy = oy * stride + dy, ix = ox * stride + dx;
            const size_t idx = (static_cast<size_t>(iy) * W + ix) * C + c;
            if (besti < 0 || in[idx] > best) {
              best = in[idx];
              besti = static_cast<int>(idx);
            }
          }
        }
        out[(static_cast<size_t>(oy) * OW + ox) * C + c] = best;
        argmax[(static_cast<size_t>(oy) * OW + ox) * C + c] = besti;
      }
    }
  }
}

} // namespace graspsim::kern

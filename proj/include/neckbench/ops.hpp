#pragma once

// Differentiable forward ops. Each op validates shapes, computes a fresh
// output tensor, reports cost to an installed FlopCounter, and (when a tape
// is active and an input is tracked) records its adjoint closure.

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "neckbench/core.hpp"

namespace neckbench {

enum class PoolMode { kMax, kAvg };

inline const char* to_string(PoolMode m) {
  return m == PoolMode::kMax ? "max" : "avg";
}

namespace testing {
/// Fault-injection hook: when set, relu's adjoint is deliberately wrong so
/// gradient-check runners can prove they detect bad adjoints.
inline bool& corrupt_relu_adjoint() {
  static bool flag = false;
  return flag;
}
}  // namespace testing

namespace detail {

inline int div_ceil(int a, int b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// Valid output range [o0, o1) so that o*stride - pad + k stays inside [0, n).
inline std::pair<int, int> conv_span(int n, int n_out, int stride, int pad,
                                     int k) {
  int lo = std::max(0, div_ceil(pad - k, stride));
  int top = n - 1 + pad - k;
  int hi = top < 0 ? 0 : std::min(n_out, top / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace detail

/// 2-D cross-correlation. weight is (C_out, C_in, kH, kW); bias, when
/// present, is a (1, C_out, 1, 1) tensor.
inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor* bias = nullptr, int stride = 1,
                     int padding = 0) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.c != ws.c)
    throw std::invalid_argument("conv2d: input channels (" +
                                std::to_string(is.c) + ") != weight C_in (" +
                                std::to_string(ws.c) + ") [input " + is.str() +
                                ", weight " + ws.str() + "]");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  if (bias && !(bias->shape() == Shape{1, ws.n, 1, 1}))
    throw std::invalid_argument("conv2d: bias shape " + bias->shape().str() +
                                " does not match C_out " +
                                std::to_string(ws.n));
  const int kh = ws.h, kw = ws.w;
  const int oh = (is.h + 2 * padding - kh) / stride + 1;
  const int ow = (is.w + 2 * padding - kw) / stride + 1;
  if (is.h + 2 * padding < kh || is.w + 2 * padding < kw || oh < 1 || ow < 1)
    throw std::invalid_argument("conv2d: zero-sized output for input " +
                                is.str() + " with kernel " + ws.str() +
                                ", stride " + std::to_string(stride) +
                                ", padding " + std::to_string(padding));

  Tensor out = Tensor::zeros({is.n, ws.n, oh, ow});

  const int B = is.n, Cin = is.c, Cout = ws.n, H = is.h, W = is.w;
  const double* in = input.ptr();
  const double* wp = weight.ptr();
  double* op = out.ptr();

  for (int b = 0; b < B; ++b) {
    for (int oc = 0; oc < Cout; ++oc) {
      double* oplane = op + (static_cast<std::size_t>(b) * Cout + oc) * oh * ow;
      if (bias) {
        const double bv = bias->ptr()[oc];
        for (int i = 0; i < oh * ow; ++i) oplane[i] = bv;
      }
      for (int ic = 0; ic < Cin; ++ic) {
        const double* iplane =
            in + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
        const double* wk =
            wp + (static_cast<std::size_t>(oc) * Cin + ic) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          auto [oy0, oy1] = detail::conv_span(H, oh, stride, padding, ky);
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = wk[ky * kw + kx];
            auto [ox0, ox1] = detail::conv_span(W, ow, stride, padding, kx);
            const int len = ox1 - ox0;
            for (int oy = oy0; oy < oy1; ++oy) {
              const double* irow = iplane +
                  static_cast<std::size_t>(oy * stride - padding + ky) * W +
                  (ox0 * stride - padding + kx);
              double* orow = oplane + static_cast<std::size_t>(oy) * ow + ox0;
              if (stride == 1) {
                for (int i = 0; i < len; ++i) orow[i] += wv * irow[i];
              } else {
                for (int i = 0; i < len; ++i) orow[i] += wv * irow[i * stride];
              }
            }
          }
        }
      }
    }
  }

  if (auto* fc = active_flop_counter()) {
    // Convention: padding-inclusive closed form, MACs = B*Cout*Cin*kH*kW*Hout*Wout.
    long long macs = 1LL * B * Cout * Cin * kh * kw * oh * ow;
    long long bias_adds = bias ? 1LL * B * Cout * oh * ow : 0;
    fc->add_conv(macs, bias_adds);
  }

  GradTape* tape = active_tape();
  bool track = input.requires_grad() || weight.requires_grad() ||
               (bias && bias->requires_grad());
  if (tape && track) {
    out.enable_grad();
    Tensor tin = input, tw = weight, tout = out;
    Tensor tb = bias ? *bias : Tensor();
    tape->record([tin, tw, tb, tout, stride, padding]() mutable {
      const Shape& is = tin.shape();
      const Shape& ws = tw.shape();
      const Shape& os = tout.shape();
      const int B = is.n, Cin = is.c, Cout = ws.n, H = is.h, W = is.w;
      const int kh = ws.h, kw = ws.w, oh = os.h, ow = os.w;
      const double* go = tout.grad().data();
      if (tb.defined() && tb.requires_grad()) {
        double* gb = tb.grad_ptr();
        for (int b = 0; b < B; ++b)
          for (int oc = 0; oc < Cout; ++oc) {
            const double* grow =
                go + (static_cast<std::size_t>(b) * Cout + oc) * oh * ow;
            double s = 0.0;
            for (int i = 0; i < oh * ow; ++i) s += grow[i];
            gb[oc] += s;
          }
      }
      const bool need_gi = tin.requires_grad();
      const bool need_gw = tw.requires_grad();
      if (!need_gi && !need_gw) return;
      double* gi = need_gi ? tin.grad_ptr() : nullptr;
      double* gw = need_gw ? tw.grad_ptr() : nullptr;
      const double* in = tin.ptr();
      const double* wp = tw.ptr();
      for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < Cout; ++oc) {
          const double* gplane =
              go + (static_cast<std::size_t>(b) * Cout + oc) * oh * ow;
          for (int ic = 0; ic < Cin; ++ic) {
            const std::size_t ibase =
                (static_cast<std::size_t>(b) * Cin + ic) * H * W;
            const std::size_t wbase =
                (static_cast<std::size_t>(oc) * Cin + ic) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
              auto [oy0, oy1] = detail::conv_span(H, oh, stride, padding, ky);
              for (int kx = 0; kx < kw; ++kx) {
                auto [ox0, ox1] = detail::conv_span(W, ow, stride, padding, kx);
                const int len = ox1 - ox0;
                const double wv = wp[wbase + ky * kw + kx];
                double wacc = 0.0;
                for (int oy = oy0; oy < oy1; ++oy) {
                  const std::size_t ioff = ibase +
                      static_cast<std::size_t>(oy * stride - padding + ky) * W +
                      (ox0 * stride - padding + kx);
                  const double* grow =
                      gplane + static_cast<std::size_t>(oy) * ow + ox0;
                  if (need_gi) {
                    double* girow = gi + ioff;
                    if (stride == 1) {
                      for (int i = 0; i < len; ++i) girow[i] += wv * grow[i];
                    } else {
                      for (int i = 0; i < len; ++i)
                        girow[i * stride] += wv * grow[i];
                    }
                  }
                  if (need_gw) {
                    const double* irow = in + ioff;
                    if (stride == 1) {
                      for (int i = 0; i < len; ++i) wacc += irow[i] * grow[i];
                    } else {
                      for (int i = 0; i < len; ++i)
                        wacc += irow[i * stride] * grow[i];
                    }
                  }
                }
                if (need_gw) gw[wbase + ky * kw + kx] += wacc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// Non-overlapping pooling by an integer factor in {1, 2, 4, 8}. Spatial
/// dims must divide exactly; factor 1 is the identity (bitwise).
inline Tensor pool2d(const Tensor& input, int factor, PoolMode mode) {
  const Shape& is = input.shape();
  if (factor != 1 && factor != 2 && factor != 4 && factor != 8)
    throw std::invalid_argument("pool2d: factor must be one of {1,2,4,8}, got " +
                                std::to_string(factor));
  if (is.h % factor != 0 || is.w % factor != 0)
    throw std::invalid_argument("pool2d: spatial dims " + is.str() +
                                " not divisible by factor " +
                                std::to_string(factor));
  const int oh = is.h / factor, ow = is.w / factor;
  Tensor out = Tensor::zeros({is.n, is.c, oh, ow});
  const double* in = input.ptr();
  double* op = out.ptr();
  const std::size_t planes = static_cast<std::size_t>(is.n) * is.c;

  // argmax indices (within the input plane) for max-pool backward routing;
  // ties broken by first visit in row-major order.
  std::vector<std::int32_t> argmax;
  if (mode == PoolMode::kMax) argmax.resize(out.numel());

  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* ip = in + pl * is.h * is.w;
    double* opl = op + pl * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        if (mode == PoolMode::kMax) {
          double best = ip[static_cast<std::size_t>(oy * factor) * is.w +
                           ox * factor];
          int besty = oy * factor, bestx = ox * factor;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) {
              double v = ip[static_cast<std::size_t>(oy * factor + dy) * is.w +
                            ox * factor + dx];
              if (v > best) {
                best = v;
                besty = oy * factor + dy;
                bestx = ox * factor + dx;
              }
            }
          opl[static_cast<std::size_t>(oy) * ow + ox] = best;
          argmax[pl * oh * ow + static_cast<std::size_t>(oy) * ow + ox] =
              besty * is.w + bestx;
        } else {
          double s = 0.0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx)
              s += ip[static_cast<std::size_t>(oy * factor + dy) * is.w +
                      ox * factor + dx];
          opl[static_cast<std::size_t>(oy) * ow + ox] =
              s / (factor * factor);
        }
      }
    }
  }

  if (auto* fc = active_flop_counter())
    fc->add_elementwise(static_cast<long long>(out.numel()));

  GradTape* tape = active_tape();
  if (tape && input.requires_grad()) {
    out.enable_grad();
    Tensor tin = input, tout = out;
    if (mode == PoolMode::kMax) {
      tape->record([tin, tout, factor, am = std::move(argmax)]() mutable {
        const Shape& is = tin.shape();
        const int oh = is.h / factor, ow = is.w / factor;
        const double* go = tout.grad().data();
        double* gi = tin.grad_ptr();
        const std::size_t planes = static_cast<std::size_t>(is.n) * is.c;
        for (std::size_t pl = 0; pl < planes; ++pl)
          for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i)
            gi[pl * is.h * is.w + am[pl * oh * ow + i]] += go[pl * oh * ow + i];
      });
    } else {
      tape->record([tin, tout, factor]() mutable {
        const Shape& is = tin.shape();
        const int oh = is.h / factor, ow = is.w / factor;
        const double* go = tout.grad().data();
        double* gi = tin.grad_ptr();
        const double inv = 1.0 / (factor * factor);
        const std::size_t planes = static_cast<std::size_t>(is.n) * is.c;
        for (std::size_t pl = 0; pl < planes; ++pl)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const double g =
                  go[pl * oh * ow + static_cast<std::size_t>(oy) * ow + ox] *
                  inv;
              for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                  gi[pl * is.h * is.w +
                     static_cast<std::size_t>(oy * factor + dy) * is.w +
                     ox * factor + dx] += g;
            }
      });
    }
  }
  return out;
}

namespace detail {

struct ResizeTap {
  int i0, i1;
  double frac;  // weight of i1
};

// Half-pixel-center sampling (align_corners = false), clamped at edges.
inline std::vector<ResizeTap> resize_taps(int in_size, int out_size) {
  std::vector<ResizeTap> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in_size - 1) src = in_size - 1;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in_size - 1) i0 = in_size - 1;
    int i1 = std::min(i0 + 1, in_size - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize to an explicit output size, half-pixel convention.
inline Tensor resize_bilinear(const Tensor& input, int out_h, int out_w) {
  const Shape& is = input.shape();
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("resize_bilinear: target dims must be >= 1");
  auto ty = detail::resize_taps(is.h, out_h);
  auto tx = detail::resize_taps(is.w, out_w);

  Tensor out = Tensor::zeros({is.n, is.c, out_h, out_w});
  const double* in = input.ptr();
  double* op = out.ptr();
  const std::size_t planes = static_cast<std::size_t>(is.n) * is.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* ip = in + pl * is.h * is.w;
    double* opl = op + pl * static_cast<std::size_t>(out_h) * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& t0 = ty[oy];
      const double* r0 = ip + static_cast<std::size_t>(t0.i0) * is.w;
      const double* r1 = ip + static_cast<std::size_t>(t0.i1) * is.w;
      double* orow = opl + static_cast<std::size_t>(oy) * out_w;
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& t1 = tx[ox];
        const double top = (1.0 - t1.frac) * r0[t1.i0] + t1.frac * r0[t1.i1];
        const double bot = (1.0 - t1.frac) * r1[t1.i0] + t1.frac * r1[t1.i1];
        orow[ox] = (1.0 - t0.frac) * top + t0.frac * bot;
      }
    }
  }

  if (auto* fc = active_flop_counter())
    fc->add_elementwise(static_cast<long long>(out.numel()));

  GradTape* tape = active_tape();
  if (tape && input.requires_grad()) {
    out.enable_grad();
    Tensor tin = input, tout = out;
    tape->record([tin, tout, ty = std::move(ty), tx = std::move(tx)]() mutable {
      const Shape& is = tin.shape();
      const Shape& os = tout.shape();
      const double* go = tout.grad().data();
      double* gi = tin.grad_ptr();
      const std::size_t planes = static_cast<std::size_t>(is.n) * is.c;
      for (std::size_t pl = 0; pl < planes; ++pl) {
        double* gp = gi + pl * is.h * is.w;
        const double* gop = go + pl * static_cast<std::size_t>(os.h) * os.w;
        for (int oy = 0; oy < os.h; ++oy) {
          const auto& t0 = ty[oy];
          for (int ox = 0; ox < os.w; ++ox) {
            const auto& t1 = tx[ox];
            const double g = gop[static_cast<std::size_t>(oy) * os.w + ox];
            gp[static_cast<std::size_t>(t0.i0) * is.w + t1.i0] +=
                (1.0 - t0.frac) * (1.0 - t1.frac) * g;
            gp[static_cast<std::size_t>(t0.i0) * is.w + t1.i1] +=
                (1.0 - t0.frac) * t1.frac * g;
            gp[static_cast<std::size_t>(t0.i1) * is.w + t1.i0] +=
                t0.frac * (1.0 - t1.frac) * g;
            gp[static_cast<std::size_t>(t0.i1) * is.w + t1.i1] +=
                t0.frac * t1.frac * g;
          }
        }
      }
    });
  }
  return out;
}

/// Bilinear upsampling by an integer factor in {2, 4}.
inline Tensor upsample_bilinear(const Tensor& input, int factor) {
  if (factor != 2 && factor != 4)
    throw std::invalid_argument("upsample_bilinear: factor must be 2 or 4, got " +
                                std::to_string(factor));
  return resize_bilinear(input, input.shape().h * factor,
                         input.shape().w * factor);
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("add: shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

  if (auto* fc = active_flop_counter())
    fc->add_elementwise(static_cast<long long>(n));

  GradTape* tape = active_tape();
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.enable_grad();
    Tensor ta = a, tb = b, tout = out;
    tape->record([ta, tb, tout]() mutable {
      const double* go = tout.grad().data();
      const std::size_t n = tout.numel();
      if (ta.requires_grad()) {
        double* ga = ta.grad_ptr();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (tb.requires_grad()) {
        double* gb = tb.grad_ptr();
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_channels: empty input list");
  const Shape& s0 = parts[0].shape();
  int ctotal = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw std::invalid_argument("concat_channels: incompatible shapes " +
                                  s0.str() + " vs " + s.str());
    ctotal += s.c;
  }
  Tensor out = Tensor::zeros({s0.n, ctotal, s0.h, s0.w});
  const std::size_t hw = static_cast<std::size_t>(s0.h) * s0.w;
  double* po = out.ptr();
  for (int b = 0; b < s0.n; ++b) {
    std::size_t coff = 0;
    for (const auto& p : parts) {
      const int pc = p.shape().c;
      const double* src = p.ptr() + static_cast<std::size_t>(b) * pc * hw;
      double* dst = po + (static_cast<std::size_t>(b) * ctotal + coff) * hw;
      std::copy(src, src + static_cast<std::size_t>(pc) * hw, dst);
      coff += pc;
    }
  }

  GradTape* tape = active_tape();
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  if (tape && track) {
    out.enable_grad();
    std::vector<Tensor> tparts = parts;
    Tensor tout = out;
    tape->record([tparts, tout, ctotal]() mutable {
      const Shape& s0 = tparts[0].shape();
      const std::size_t hw = static_cast<std::size_t>(s0.h) * s0.w;
      const double* go = tout.grad().data();
      for (int b = 0; b < s0.n; ++b) {
        std::size_t coff = 0;
        for (auto& p : tparts) {
          const int pc = p.shape().c;
          if (p.requires_grad()) {
            double* gp = p.grad_ptr() + static_cast<std::size_t>(b) * pc * hw;
            const double* src =
                go + (static_cast<std::size_t>(b) * ctotal + coff) * hw;
            for (std::size_t i = 0; i < static_cast<std::size_t>(pc) * hw; ++i)
              gp[i] += src[i];
          }
          coff += pc;
        }
      }
    });
  }
  return out;
}

/// Channel slice [from, to); the inverse of concat_channels.
inline Tensor slice_channels(const Tensor& t, int from, int to) {
  const Shape& s = t.shape();
  if (from < 0 || to > s.c || from >= to)
    throw std::invalid_argument("slice_channels: bad range [" +
                                std::to_string(from) + ", " +
                                std::to_string(to) + ") for " + s.str());
  Tensor out = Tensor::zeros({s.n, to - from, s.h, s.w});
  const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
  const int oc = to - from;
  for (int b = 0; b < s.n; ++b) {
    const double* src = t.ptr() + (static_cast<std::size_t>(b) * s.c + from) * hw;
    double* dst = out.ptr() + static_cast<std::size_t>(b) * oc * hw;
    std::copy(src, src + static_cast<std::size_t>(oc) * hw, dst);
  }

  GradTape* tape = active_tape();
  if (tape && t.requires_grad()) {
    out.enable_grad();
    Tensor tin = t, tout = out;
    tape->record([tin, tout, from, oc]() mutable {
      const Shape& s = tin.shape();
      const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
      const double* go = tout.grad().data();
      double* gi = tin.grad_ptr();
      for (int b = 0; b < s.n; ++b) {
        double* dst = gi + (static_cast<std::size_t>(b) * s.c + from) * hw;
        const double* src = go + static_cast<std::size_t>(b) * oc * hw;
        for (std::size_t i = 0; i < static_cast<std::size_t>(oc) * hw; ++i)
          dst[i] += src[i];
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& t) {
  Tensor out = Tensor::zeros(t.shape());
  const double* in = t.ptr();
  double* po = out.ptr();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = in[i] > 0.0 ? in[i] : 0.0;

  if (auto* fc = active_flop_counter())
    fc->add_elementwise(static_cast<long long>(n));

  GradTape* tape = active_tape();
  if (tape && t.requires_grad()) {
    out.enable_grad();
    Tensor tin = t, tout = out;
    tape->record([tin, tout]() mutable {
      const double* go = tout.grad().data();
      const double* in = tin.ptr();
      double* gi = tin.grad_ptr();
      const std::size_t n = tin.numel();
      const double skew = testing::corrupt_relu_adjoint() ? 1.001 : 1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (in[i] > 0.0) gi[i] += skew * go[i];
    });
  }
  return out;
}

inline Tensor scale(const Tensor& t, double k) {
  Tensor out = Tensor::zeros(t.shape());
  const double* in = t.ptr();
  double* po = out.ptr();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = k * in[i];

  if (auto* fc = active_flop_counter())
    fc->add_elementwise(static_cast<long long>(n));

  GradTape* tape = active_tape();
  if (tape && t.requires_grad()) {
    out.enable_grad();
    Tensor tin = t, tout = out;
    tape->record([tin, tout, k]() mutable {
      const double* go = tout.grad().data();
      double* gi = tin.grad_ptr();
      const std::size_t n = tin.numel();
      for (std::size_t i = 0; i < n; ++i) gi[i] += k * go[i];
    });
  }
  return out;
}

/// Sum of all elements as a 1x1x1x1 scalar tensor.
inline Tensor sum(const Tensor& t) {
  double s = 0.0;
  const double* in = t.ptr();
  const std::size_t n = t.numel();
  for (std::size_t i = 0; i < n; ++i) s += in[i];
  Tensor out = Tensor::scalar(s);

  if (auto* fc = active_flop_counter())
    fc->add_elementwise(static_cast<long long>(n));

  GradTape* tape = active_tape();
  if (tape && t.requires_grad()) {
    out.enable_grad();
    Tensor tin = t, tout = out;
    tape->record([tin, tout]() mutable {
      const double g = tout.grad()[0];
      double* gi = tin.grad_ptr();
      const std::size_t n = tin.numel();
      for (std::size_t i = 0; i < n; ++i) gi[i] += g;
    });
  }
  return out;
}

/// Temporarily deactivates any installed tape (pure forward evaluation).
class TapeSuspend {
 public:
  TapeSuspend() : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = nullptr;
  }
  ~TapeSuspend() { detail::active_tape_slot() = prev_; }
  TapeSuspend(const TapeSuspend&) = delete;
  TapeSuspend& operator=(const TapeSuspend&) = delete;

 private:
  GradTape* prev_;
};

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences at every coordinate of `point`. Returns the max of
/// |analytic - numeric| / max(1, |analytic|).
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                const Tensor& point, double eps) {
  std::vector<double> analytic;
  {
    TapeSuspend no_outer;
    Tensor x = point.clone();
    x.enable_grad();
    GradTape tape;
    TapeScope scope(tape);
    Tensor loss = f(x);
    if (loss.numel() != 1)
      throw std::invalid_argument("finite_diff_check: f must be scalar-valued");
    tape.backward(loss);
    analytic = x.grad();
  }

  TapeSuspend no_tape;
  Tensor probe = point.clone();
  double max_err = 0.0;
  auto& d = probe.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double orig = d[i];
    d[i] = orig + eps;
    const double fp = f(probe).item();
    d[i] = orig - eps;
    const double fm = f(probe).item();
    d[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (err > max_err) max_err = err;
  }
  return max_err;
}

}  // namespace neckbench

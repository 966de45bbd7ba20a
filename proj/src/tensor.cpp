// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bafnet/tensor.hpp"

#include <cblas.h>
#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <unordered_set>

namespace bafnet {

bool& finite_checks_enabled() {
  static bool enabled = [] {
    const char* env = std::getenv("BAFNET_CHECK_FINITE");
    return env && env[0] == '1';
  }();
  return enabled;
}

namespace detail {
bool& grad_mode() {
  thread_local bool mode = true;
  return mode;
}
}  // namespace detail

void runtime_init() {
  static std::atomic<bool> done{false};
  bool expected = false;
  if (done.compare_exchange_strong(expected, true)) {
    // GEMMs are parallelised by splitting the output ourselves; the BLAS
    // worker pool would fight with the OpenMP loops otherwise.
    openblas_set_num_threads(1);
  }
}

namespace {

using detail::Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->leaf = false;
  bool rg = false;
  if (detail::grad_mode()) {
    for (const auto& p : parents) rg = rg || p.requires_grad();
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  Tensor<T> out(std::move(n));
  if (finite_checks_enabled()) check_finite(out, "op output");
  return out;
}

// ---------------------------------------------------------------------------
// GEMM: row-major C(M,N) = alpha * op(A) op(B) + beta * C.
// Splits the larger output dimension across OpenMP threads; each block is a
// single sequential BLAS call, so results do not depend on thread count.
// ---------------------------------------------------------------------------

template <typename T>
void gemm_raw(bool ta, bool tb, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
              int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  auto opa = ta ? CblasTrans : CblasNoTrans;
  auto opb = tb ? CblasTrans : CblasNoTrans;
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, opa, opb, (int)m, (int)n, (int)k, alpha, a, (int)lda, b,
                (int)ldb, beta, c, (int)ldc);
  } else {
    cblas_dgemm(CblasRowMajor, opa, opb, (int)m, (int)n, (int)k, alpha, a, (int)lda, b,
                (int)ldb, beta, c, (int)ldc);
  }
}

template <typename T>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  runtime_init();
  const int64_t work = m * n * k;
  const int threads = omp_get_max_threads();
  if (threads <= 1 || work < (1 << 18) || omp_in_parallel()) {
    gemm_raw(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  if (n >= m) {
    const int64_t chunk = (n + threads - 1) / threads;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < threads; ++t) {
      int64_t n0 = t * chunk;
      int64_t nb = std::min<int64_t>(chunk, n - n0);
      if (nb <= 0) continue;
      const T* bp = tb ? b + n0 * ldb : b + n0;
      gemm_raw(ta, tb, m, nb, k, alpha, a, lda, bp, ldb, beta, c + n0, ldc);
    }
  } else {
    const int64_t chunk = (m + threads - 1) / threads;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < threads; ++t) {
      int64_t m0 = t * chunk;
      int64_t mb = std::min<int64_t>(chunk, m - m0);
      if (mb <= 0) continue;
      const T* ap = ta ? a + m0 : a + m0 * lda;
      gemm_raw(ta, tb, mb, n, k, alpha, ap, lda, b, ldb, beta, c + m0 * ldc, ldc);
    }
  }
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  BAFNET_CHECK(a.size() == b.size(), "broadcast requires equal rank, got "
                                         << shape_str(a) << " vs " << shape_str(b));
  Shape out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    BAFNET_CHECK(a[i] == b[i] || a[i] == 1 || b[i] == 1,
                 "incompatible shapes " << shape_str(a) << " vs " << shape_str(b));
    out[i] = std::max(a[i], b[i]);
  }
  return out;
}

inline std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = (int)s.size() - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides with zeros on broadcast dims, for reading operand `s` as shape `out`.
inline std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  auto st = contiguous_strides(s);
  for (size_t i = 0; i < s.size(); ++i)
    if (s[i] == 1 && out[i] != 1) st[i] = 0;
  return st;
}

template <typename T, typename F>
void broadcast_apply(const Shape& out, const T* a, const std::vector<int64_t>& sa,
                     const T* b, const std::vector<int64_t>& sb, T* dst, F f) {
  const int rank = (int)out.size();
  const int64_t n = shape_numel(out);
  auto so = contiguous_strides(out);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    int64_t rem = i, ia = 0, ib = 0;
    for (int d = 0; d < rank; ++d) {
      int64_t idx = rem / so[d];
      rem -= idx * so[d];
      ia += idx * sa[d];
      ib += idx * sb[d];
    }
    dst[i] = f(a[ia], b[ib]);
  }
}

// Sum `src` (shaped `from`) into `dst` (shaped `to`, equal rank, dims equal
// or 1). Deterministic: serial over the reduction.
template <typename T>
void reduce_to(const T* src, const Shape& from, T* dst, const Shape& to) {
  const int rank = (int)from.size();
  auto sf = contiguous_strides(from);
  auto st_to = broadcast_strides(to, from);
  const int64_t n = shape_numel(from);
  for (int64_t i = 0; i < n; ++i) {
    int64_t rem = i, j = 0;
    for (int d = 0; d < rank; ++d) {
      int64_t idx = rem / sf[d];
      rem -= idx * sf[d];
      j += idx * st_to[d];
    }
    dst[j] += src[i];
  }
}

template <typename T>
bool same_shape(const Shape& a, const Shape& b) {
  return a == b;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvDims {
  int64_t batch, cin, h, w, cout, k, oh, ow;
};

inline ConvDims conv_dims(const Shape& xs, const Shape& ws, const ConvSpec& sp) {
  BAFNET_CHECK(xs.size() == 4 && ws.size() == 4,
               "conv2d expects 4-d input/weight, got " << shape_str(xs) << " and "
                                                       << shape_str(ws));
  BAFNET_CHECK(sp.stride > 0 && sp.dilation > 0, "conv2d stride/dilation must be positive");
  BAFNET_CHECK(sp.groups > 0 && xs[1] % sp.groups == 0,
               "groups " << sp.groups << " must divide input channels " << xs[1]);
  BAFNET_CHECK(ws[0] % sp.groups == 0,
               "groups " << sp.groups << " must divide output channels " << ws[0]);
  BAFNET_CHECK(ws[1] == xs[1] / sp.groups,
               "weight expects " << ws[1] << " channels per group, input provides "
                                 << xs[1] / sp.groups);
  BAFNET_CHECK(ws[2] == ws[3], "only square kernels are supported, got "
                                   << ws[2] << "x" << ws[3]);
  ConvDims d;
  d.batch = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ws[0];
  d.k = ws[2];
  auto out_extent = [&](int64_t in) {
    int64_t e = (in + 2 * sp.padding - sp.dilation * (d.k - 1) - 1) / sp.stride + 1;
    BAFNET_CHECK(e > 0, "conv2d output collapses to zero on extent " << in);
    return e;
  };
  d.oh = out_extent(d.h);
  d.ow = out_extent(d.w);
  return d;
}

// col is (cin_g*k*k, oh*ow) row-major for one (batch, group) slice.
template <typename T>
void im2col(const T* x, int64_t cin_g, int64_t h, int64_t w, int64_t k, int64_t oh,
            int64_t ow, const ConvSpec& sp, T* col) {
  const int64_t ohw = oh * ow;
#pragma omp parallel for collapse(2) schedule(static) if (!omp_in_parallel())
  for (int64_t c = 0; c < cin_g; ++c) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        T* dst = col + ((c * k + ky) * k + kx) * ohw;
        const T* src = x + c * h * w;
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t iy = oy * sp.stride - sp.padding + ky * sp.dilation;
          if (iy < 0 || iy >= h) {
            std::fill(dst + oy * ow, dst + (oy + 1) * ow, T(0));
            continue;
          }
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t ix = ox * sp.stride - sp.padding + kx * sp.dilation;
            dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[iy * w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int64_t cin_g, int64_t h, int64_t w, int64_t k, int64_t oh,
                int64_t ow, const ConvSpec& sp, T* x) {
  const int64_t ohw = oh * ow;
#pragma omp parallel for schedule(static) if (!omp_in_parallel())
  for (int64_t c = 0; c < cin_g; ++c) {
    T* dst = x + c * h * w;
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        const T* src = col + ((c * k + ky) * k + kx) * ohw;
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t iy = oy * sp.stride - sp.padding + ky * sp.dilation;
          if (iy < 0 || iy >= h) continue;
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t ix = ox * sp.stride - sp.padding + kx * sp.dilation;
            if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void add_bias_nchw(T* y, const T* bias, int64_t batch, int64_t c, int64_t hw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      T* row = y + (b * c + ch) * hw;
      const T v = bias[ch];
      for (int64_t i = 0; i < hw; ++i) row[i] += v;
    }
}

// Depthwise (groups == cin, one filter per channel) forward.
template <typename T>
void depthwise_fwd(const T* x, const T* w, T* y, const ConvDims& d, const ConvSpec& sp) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t c = 0; c < d.cin; ++c) {
      const T* xs = x + (b * d.cin + c) * d.h * d.w;
      const T* ws = w + c * d.k * d.k;
      T* ys = y + (b * d.cin + c) * d.oh * d.ow;
      for (int64_t oy = 0; oy < d.oh; ++oy) {
        for (int64_t ox = 0; ox < d.ow; ++ox) {
          T acc = 0;
          for (int64_t ky = 0; ky < d.k; ++ky) {
            int64_t iy = oy * sp.stride - sp.padding + ky * sp.dilation;
            if (iy < 0 || iy >= d.h) continue;
            for (int64_t kx = 0; kx < d.k; ++kx) {
              int64_t ix = ox * sp.stride - sp.padding + kx * sp.dilation;
              if (ix >= 0 && ix < d.w) acc += ws[ky * d.k + kx] * xs[iy * d.w + ix];
            }
          }
          ys[oy * d.ow + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void depthwise_bwd_x(const T* dy, const T* w, T* dx, const ConvDims& d, const ConvSpec& sp) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t c = 0; c < d.cin; ++c) {
      const T* dys = dy + (b * d.cin + c) * d.oh * d.ow;
      const T* ws = w + c * d.k * d.k;
      T* dxs = dx + (b * d.cin + c) * d.h * d.w;
      for (int64_t oy = 0; oy < d.oh; ++oy) {
        for (int64_t ox = 0; ox < d.ow; ++ox) {
          const T g = dys[oy * d.ow + ox];
          if (g == T(0)) continue;
          for (int64_t ky = 0; ky < d.k; ++ky) {
            int64_t iy = oy * sp.stride - sp.padding + ky * sp.dilation;
            if (iy < 0 || iy >= d.h) continue;
            for (int64_t kx = 0; kx < d.k; ++kx) {
              int64_t ix = ox * sp.stride - sp.padding + kx * sp.dilation;
              if (ix >= 0 && ix < d.w) dxs[iy * d.w + ix] += g * ws[ky * d.k + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_bwd_w(const T* dy, const T* x, T* dw, const ConvDims& d, const ConvSpec& sp) {
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < d.cin; ++c) {
    T* dws = dw + c * d.k * d.k;
    for (int64_t b = 0; b < d.batch; ++b) {
      const T* dys = dy + (b * d.cin + c) * d.oh * d.ow;
      const T* xs = x + (b * d.cin + c) * d.h * d.w;
      for (int64_t ky = 0; ky < d.k; ++ky) {
        for (int64_t kx = 0; kx < d.k; ++kx) {
          T acc = 0;
          for (int64_t oy = 0; oy < d.oh; ++oy) {
            int64_t iy = oy * sp.stride - sp.padding + ky * sp.dilation;
            if (iy < 0 || iy >= d.h) continue;
            for (int64_t ox = 0; ox < d.ow; ++ox) {
              int64_t ix = ox * sp.stride - sp.padding + kx * sp.dilation;
              if (ix >= 0 && ix < d.w) acc += dys[oy * d.ow + ox] * xs[iy * d.w + ix];
            }
          }
          dws[ky * d.k + kx] += acc;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), spec);
  if (bias.defined())
    BAFNET_CHECK(bias.numel() == d.cout, "conv2d bias expects " << d.cout << " entries, got "
                                                                << bias.numel());
  const bool is_k1 = d.k == 1 && spec.stride == 1 && spec.padding == 0 && spec.groups == 1;
  const bool is_dw = spec.groups == d.cin && d.cout == d.cin;

  std::vector<T> y((size_t)(d.batch * d.cout * d.oh * d.ow));
  const int64_t ohw = d.oh * d.ow;
  const int64_t cin_g = d.cin / spec.groups;
  const int64_t cout_g = d.cout / spec.groups;

  if (is_k1) {
    for (int64_t b = 0; b < d.batch; ++b)
      gemm(false, false, d.cout, d.h * d.w, d.cin, T(1), w.data(), d.cin,
           x.data() + b * d.cin * d.h * d.w, d.h * d.w, T(0), y.data() + b * d.cout * ohw,
           ohw);
  } else if (is_dw) {
    depthwise_fwd(x.data(), w.data(), y.data(), d, spec);
  } else {
    std::vector<T> col((size_t)(cin_g * d.k * d.k * ohw));
    for (int64_t b = 0; b < d.batch; ++b) {
      for (int64_t g = 0; g < spec.groups; ++g) {
        im2col(x.data() + (b * d.cin + g * cin_g) * d.h * d.w, cin_g, d.h, d.w, d.k, d.oh,
               d.ow, spec, col.data());
        gemm(false, false, cout_g, ohw, cin_g * d.k * d.k, T(1),
             w.data() + g * cout_g * cin_g * d.k * d.k, cin_g * d.k * d.k, col.data(), ohw,
             T(0), y.data() + (b * d.cout + g * cout_g) * ohw, ohw);
      }
    }
  }
  if (bias.defined()) add_bias_nchw(y.data(), bias.data(), d.batch, d.cout, ohw);

  std::vector<Tensor<T>> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  ConvSpec sp = spec;
  return make_result<T>(
      {d.batch, d.cout, d.oh, d.ow}, std::move(y), std::move(parents),
      [xn, wn, bn, sp, d, is_k1, is_dw, cin_g, cout_g, ohw](Node<T>& out) {
        const T* dy = out.grad.data();
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          T* db = bn->grad.data();
#pragma omp parallel for schedule(static)
          for (int64_t c = 0; c < d.cout; ++c) {
            T acc = 0;
            for (int64_t b = 0; b < d.batch; ++b) {
              const T* row = dy + (b * d.cout + c) * ohw;
              for (int64_t i = 0; i < ohw; ++i) acc += row[i];
            }
            db[c] += acc;
          }
        }
        if (is_k1) {
          if (xn->requires_grad) {
            xn->ensure_grad();
            for (int64_t b = 0; b < d.batch; ++b)
              gemm(true, false, d.cin, ohw, d.cout, T(1), wn->data.data(), d.cin,
                   dy + b * d.cout * ohw, ohw, T(1), xn->grad.data() + b * d.cin * ohw, ohw);
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            for (int64_t b = 0; b < d.batch; ++b)
              gemm(false, true, d.cout, d.cin, ohw, T(1), dy + b * d.cout * ohw, ohw,
                   xn->data.data() + b * d.cin * ohw, ohw, T(1), wn->grad.data(), d.cin);
          }
          return;
        }
        if (is_dw) {
          if (xn->requires_grad) {
            xn->ensure_grad();
            depthwise_bwd_x(dy, wn->data.data(), xn->grad.data(), d, sp);
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            depthwise_bwd_w(dy, xn->data.data(), wn->grad.data(), d, sp);
          }
          return;
        }
        const int64_t ck2 = cin_g * d.k * d.k;
        std::vector<T> col((size_t)(ck2 * ohw));
        std::vector<T> dcol((size_t)(ck2 * ohw));
        for (int64_t b = 0; b < d.batch; ++b) {
          for (int64_t g = 0; g < sp.groups; ++g) {
            const T* xg = xn->data.data() + (b * d.cin + g * cin_g) * d.h * d.w;
            const T* dyg = dy + (b * d.cout + g * cout_g) * ohw;
            const T* wg = wn->data.data() + g * cout_g * ck2;
            if (wn->requires_grad) {
              wn->ensure_grad();
              im2col(xg, cin_g, d.h, d.w, d.k, d.oh, d.ow, sp, col.data());
              gemm(false, true, cout_g, ck2, ohw, T(1), dyg, ohw, col.data(), ohw, T(1),
                   wn->grad.data() + g * cout_g * ck2, ck2);
            }
            if (xn->requires_grad) {
              xn->ensure_grad();
              gemm(true, false, ck2, ohw, cout_g, T(1), wg, ck2, dyg, ohw, T(0),
                   dcol.data(), ohw);
              col2im_add(dcol.data(), cin_g, d.h, d.w, d.k, d.oh, d.ow, sp,
                         xn->grad.data() + (b * d.cin + g * cin_g) * d.h * d.w);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// bilinear_resize
// ---------------------------------------------------------------------------

namespace {

struct LerpTap {
  int64_t lo, hi;
  double t;  // weight of hi
};

inline std::vector<LerpTap> make_taps(int64_t in, int64_t out) {
  std::vector<LerpTap> taps((size_t)out);
  const double r = (double)in / (double)out;
  for (int64_t o = 0; o < out; ++o) {
    double s = (o + 0.5) * r - 0.5;
    double fl = std::floor(s);
    double t = s - fl;
    int64_t lo = (int64_t)fl;
    int64_t hi = lo + 1;
    lo = std::clamp<int64_t>(lo, 0, in - 1);
    hi = std::clamp<int64_t>(hi, 0, in - 1);
    taps[(size_t)o] = {lo, hi, t};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  BAFNET_CHECK(x.rank() == 4, "bilinear_resize expects (B,C,H,W), got " << shape_str(x.shape()));
  BAFNET_CHECK(out_h > 0 && out_w > 0, "bilinear_resize target must be positive");
  const int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = make_taps(h, out_h);
  auto tx = make_taps(w, out_w);
  std::vector<T> y((size_t)(batch * c * out_h * out_w));
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < batch * c; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[(size_t)oy];
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[(size_t)ox];
        double v00 = src[a.lo * w + b.lo], v01 = src[a.lo * w + b.hi];
        double v10 = src[a.hi * w + b.lo], v11 = src[a.hi * w + b.hi];
        double top = v00 + (v01 - v00) * b.t;
        double bot = v10 + (v11 - v10) * b.t;
        dst[oy * out_w + ox] = (T)(top + (bot - top) * a.t);
      }
    }
  }
  auto xn = x.node();
  return make_result<T>(
      {batch, c, out_h, out_w}, std::move(y), {x},
      [xn, ty, tx, batch, c, h, w, out_h, out_w](Node<T>& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* dy = out.grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < batch * c; ++p) {
          T* dx = xn->grad.data() + p * h * w;
          const T* g = dy + p * out_h * out_w;
          for (int64_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[(size_t)oy];
            for (int64_t ox = 0; ox < out_w; ++ox) {
              const auto& b = tx[(size_t)ox];
              const T gv = g[oy * out_w + ox];
              dx[a.lo * w + b.lo] += (T)((1 - a.t) * (1 - b.t)) * gv;
              dx[a.lo * w + b.hi] += (T)((1 - a.t) * b.t) * gv;
              dx[a.hi * w + b.lo] += (T)(a.t * (1 - b.t)) * gv;
              dx[a.hi * w + b.hi] += (T)(a.t * b.t) * gv;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, double factor) {
  BAFNET_CHECK(factor > 0, "bilinear_resize factor must be positive, got " << factor);
  int64_t oh = (int64_t)std::llround(x.dim(2) * factor);
  int64_t ow = (int64_t)std::llround(x.dim(3) * factor);
  return bilinear_resize(x, oh, ow);
}

// ---------------------------------------------------------------------------
// batch_norm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>* running_mean, Tensor<T>* running_var, bool training,
                     T momentum, T eps) {
  BAFNET_CHECK(x.rank() == 4, "batch_norm expects (B,C,H,W), got " << shape_str(x.shape()));
  const int64_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  BAFNET_CHECK(gamma.numel() == c && beta.numel() == c,
               "batch_norm scale/shift expect " << c << " channels");
  const bool track = running_mean && running_mean->defined();
  if (!training)
    BAFNET_CHECK(track && running_mean->numel() == c && running_var->numel() == c,
                 "batch_norm eval mode needs running stats for " << c << " channels");

  const int64_t m = batch * hw;
  std::vector<T> mean((size_t)c), invstd((size_t)c);
  if (training) {
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (int64_t b = 0; b < batch; ++b) {
        const T* row = x.data() + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) acc += row[i];
      }
      double mu = acc / m;
      double var = 0;
      for (int64_t b = 0; b < batch; ++b) {
        const T* row = x.data() + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          double dlt = row[i] - mu;
          var += dlt * dlt;
        }
      }
      var /= m;  // biased, used for normalisation
      mean[(size_t)ch] = (T)mu;
      invstd[(size_t)ch] = (T)(1.0 / std::sqrt(var + (double)eps));
      if (track) {
        double unbiased = m > 1 ? var * m / (m - 1) : var;
        T* rm = running_mean->data();
        T* rv = running_var->data();
        rm[ch] = (T)((1 - (double)momentum) * rm[ch] + (double)momentum * mu);
        rv[ch] = (T)((1 - (double)momentum) * rv[ch] + (double)momentum * unbiased);
      }
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[(size_t)ch] = running_mean->data()[ch];
      invstd[(size_t)ch] =
          (T)(1.0 / std::sqrt((double)running_var->data()[ch] + (double)eps));
    }
  }

  std::vector<T> y(x.vec().size());
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* row = x.data() + (b * c + ch) * hw;
      T* dst = y.data() + (b * c + ch) * hw;
      const T mu = mean[(size_t)ch], is = invstd[(size_t)ch];
      const T g = gamma.data()[ch], bb = beta.data()[ch];
      for (int64_t i = 0; i < hw; ++i) dst[i] = (row[i] - mu) * is * g + bb;
    }

  auto xn = x.node();
  auto gn = gamma.node();
  auto btn = beta.node();
  return make_result<T>(
      x.shape(), std::move(y), {x, gamma, beta},
      [xn, gn, btn, mean, invstd, batch, c, hw, m, training](Node<T>& out) {
        const T* dy = out.grad.data();
        // Per-channel reductions shared by all three gradients.
        std::vector<T> sum_dy((size_t)c, T(0)), sum_dy_xhat((size_t)c, T(0));
#pragma omp parallel for schedule(static)
        for (int64_t ch = 0; ch < c; ++ch) {
          double s = 0, sx = 0;
          const T mu = mean[(size_t)ch], is = invstd[(size_t)ch];
          for (int64_t b = 0; b < batch; ++b) {
            const T* g = dy + (b * c + ch) * hw;
            const T* xv = xn->data.data() + (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              s += g[i];
              sx += g[i] * (xv[i] - mu) * is;
            }
          }
          sum_dy[(size_t)ch] = (T)s;
          sum_dy_xhat[(size_t)ch] = (T)sx;
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int64_t ch = 0; ch < c; ++ch) gn->grad[(size_t)ch] += sum_dy_xhat[(size_t)ch];
        }
        if (btn->requires_grad) {
          btn->ensure_grad();
          for (int64_t ch = 0; ch < c; ++ch) btn->grad[(size_t)ch] += sum_dy[(size_t)ch];
        }
        if (!xn->requires_grad) return;
        xn->ensure_grad();
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t ch = 0; ch < c; ++ch) {
            const T mu = mean[(size_t)ch], is = invstd[(size_t)ch];
            const T g = gn->data.data()[ch];
            const T* gy = dy + (b * c + ch) * hw;
            const T* xv = xn->data.data() + (b * c + ch) * hw;
            T* dx = xn->grad.data() + (b * c + ch) * hw;
            if (training) {
              const T k1 = sum_dy[(size_t)ch] / (T)m;
              const T k2 = sum_dy_xhat[(size_t)ch] / (T)m;
              for (int64_t i = 0; i < hw; ++i) {
                T xhat = (xv[i] - mu) * is;
                dx[i] += g * is * (gy[i] - k1 - xhat * k2);
              }
            } else {
              for (int64_t i = 0; i < hw; ++i) dx[i] += g * is * gy[i];
            }
          }
      });
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps) {
  const int64_t c = x.shape().back();
  BAFNET_CHECK(gamma.numel() == c && beta.numel() == c,
               "layer_norm scale/shift expect " << c << " features, got "
                                                << gamma.numel() << "/" << beta.numel());
  const int64_t rows = x.numel() / c;
  std::vector<T> y(x.vec().size());
  std::vector<T> mean((size_t)rows), invstd((size_t)rows);
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * c;
    double mu = 0;
    for (int64_t i = 0; i < c; ++i) mu += row[i];
    mu /= c;
    double var = 0;
    for (int64_t i = 0; i < c; ++i) {
      double d = row[i] - mu;
      var += d * d;
    }
    var /= c;
    double is = 1.0 / std::sqrt(var + (double)eps);
    mean[(size_t)r] = (T)mu;
    invstd[(size_t)r] = (T)is;
    T* dst = y.data() + r * c;
    for (int64_t i = 0; i < c; ++i)
      dst[i] = (T)((row[i] - mu) * is) * gamma.data()[i] + beta.data()[i];
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto btn = beta.node();
  return make_result<T>(
      x.shape(), std::move(y), {x, gamma, beta},
      [xn, gn, btn, mean, invstd, rows, c](Node<T>& out) {
        const T* dy = out.grad.data();
        if (gn->requires_grad || btn->requires_grad) {
          gn->ensure_grad();
          btn->ensure_grad();
          for (int64_t r = 0; r < rows; ++r) {
            const T mu = mean[(size_t)r], is = invstd[(size_t)r];
            const T* xv = xn->data.data() + r * c;
            const T* g = dy + r * c;
            for (int64_t i = 0; i < c; ++i) {
              gn->grad[(size_t)i] += g[i] * (xv[i] - mu) * is;
              btn->grad[(size_t)i] += g[i];
            }
          }
        }
        if (!xn->requires_grad) return;
        xn->ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; ++r) {
          const T mu = mean[(size_t)r], is = invstd[(size_t)r];
          const T* xv = xn->data.data() + r * c;
          const T* g = dy + r * c;
          T* dx = xn->grad.data() + r * c;
          double s1 = 0, s2 = 0;
          for (int64_t i = 0; i < c; ++i) {
            double gg = g[i] * gn->data.data()[i];
            double xhat = (xv[i] - mu) * is;
            s1 += gg;
            s2 += gg * xhat;
          }
          s1 /= c;
          s2 /= c;
          for (int64_t i = 0; i < c; ++i) {
            double gg = g[i] * gn->data.data()[i];
            double xhat = (xv[i] - mu) * is;
            dx[i] += (T)(is * (gg - s1 - xhat * s2));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

namespace {

template <typename T, typename FwdF, typename BwdF>
Tensor<T> unary_op(const Tensor<T>& x, FwdF f, BwdF df) {
  std::vector<T> y(x.vec().size());
  const T* xv = x.data();
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[(size_t)i] = f(xv[i]);
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(y), {x}, [xn, df, n](Node<T>& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T* dy = out.grad.data();
    const T* xv = xn->data.data();
    const T* yv = out.data.data();
    T* dx = xn->grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(
      x, [](T v) { return (T)(0.5 * (double)v * (1.0 + std::erf((double)v * kInvSqrt2))); },
      [](T v, T) {
        double cdf = 0.5 * (1.0 + std::erf((double)v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * (double)v * (double)v);
        return (T)(cdf + (double)v * pdf);
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return (T)(1.0 / (1.0 + std::exp(-(double)v))); },
      [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0) axis += x.rank();
  BAFNET_CHECK(axis >= 0 && axis < x.rank(), "softmax axis out of range");
  const auto& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[(size_t)i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[(size_t)i];
  const int64_t n = s[(size_t)axis];

  std::vector<T> y(x.vec().size());
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const T* row = x.data() + o * n * inner + in;
      T* dst = y.data() + o * n * inner + in;
      T mx = row[0];
      for (int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i * inner]);
      double z = 0;
      for (int64_t i = 0; i < n; ++i) {
        double e = std::exp((double)(row[i * inner] - mx));
        dst[i * inner] = (T)e;
        z += e;
      }
      double iz = 1.0 / z;
      for (int64_t i = 0; i < n; ++i) dst[i * inner] = (T)((double)dst[i * inner] * iz);
    }
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(y), {x}, [xn, outer, inner, n](Node<T>& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T* dy = out.grad.data();
    const T* yv = out.data.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const T* g = dy + o * n * inner + in;
        const T* yy = yv + o * n * inner + in;
        T* dx = xn->grad.data() + o * n * inner + in;
        double dot = 0;
        for (int64_t i = 0; i < n; ++i) dot += (double)g[i * inner] * yy[i * inner];
        for (int64_t i = 0; i < n; ++i)
          dx[i * inner] += (T)(yy[i * inner] * ((double)g[i * inner] - dot));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise add / mul / scale
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) {
    std::vector<T> y(a.vec().size());
    const int64_t n = a.numel();
    const T* av = a.data();
    const T* bv = b.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[(size_t)i] = av[i] + bv[i];
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>(a.shape(), std::move(y), {a, b}, [an, bn, n](Node<T>& out) {
      const T* dy = out.grad.data();
      for (auto& p : {an, bn}) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        T* dst = p->grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) dst[i] += dy[i];
      }
    });
  }
  Shape os = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  std::vector<T> y((size_t)shape_numel(os));
  broadcast_apply(os, a.data(), sa, b.data(), sb, y.data(),
                  [](T x, T z) { return x + z; });
  auto an = a.node();
  auto bn = b.node();
  Shape as = a.shape(), bs = b.shape();
  return make_result<T>(os, std::move(y), {a, b}, [an, bn, as, bs, os](Node<T>& out) {
    if (an->requires_grad) {
      an->ensure_grad();
      reduce_to(out.grad.data(), os, an->grad.data(), as);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      reduce_to(out.grad.data(), os, bn->grad.data(), bs);
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) {
    std::vector<T> y(a.vec().size());
    const int64_t n = a.numel();
    const T* av = a.data();
    const T* bv = b.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[(size_t)i] = av[i] * bv[i];
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>(a.shape(), std::move(y), {a, b}, [an, bn, n](Node<T>& out) {
      const T* dy = out.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        T* dst = an->grad.data();
        const T* other = bn->data.data();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) dst[i] += dy[i] * other[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        T* dst = bn->grad.data();
        const T* other = an->data.data();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) dst[i] += dy[i] * other[i];
      }
    });
  }
  Shape os = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  std::vector<T> y((size_t)shape_numel(os));
  broadcast_apply(os, a.data(), sa, b.data(), sb, y.data(),
                  [](T x, T z) { return x * z; });
  auto an = a.node();
  auto bn = b.node();
  Shape as = a.shape(), bs = b.shape();
  return make_result<T>(os, std::move(y), {a, b}, [an, bn, as, bs, os, sa, sb](Node<T>& out) {
    const int rank = (int)os.size();
    auto so = contiguous_strides(os);
    const int64_t n = shape_numel(os);
    const T* dy = out.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        int64_t rem = i, ia = 0, ib = 0;
        for (int d = 0; d < rank; ++d) {
          int64_t idx = rem / so[d];
          rem -= idx * so[d];
          ia += idx * sa[d];
          ib += idx * sb[d];
        }
        an->grad[(size_t)ia] += dy[i] * bn->data[(size_t)ib];
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        int64_t rem = i, ia = 0, ib = 0;
        for (int d = 0; d < rank; ++d) {
          int64_t idx = rem / so[d];
          rem -= idx * so[d];
          ia += idx * sa[d];
          ib += idx * sb[d];
        }
        bn->grad[(size_t)ib] += dy[i] * an->data[(size_t)ia];
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T cst) {
  return unary_op(
      a, [cst](T v) { return v * cst; }, [cst](T, T) { return cst; });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  BAFNET_CHECK(a.rank() >= 2 && b.rank() >= 2, "matmul needs rank >= 2 operands");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const int64_t mm = as[as.size() - 2], kk = as[as.size() - 1];
  const int64_t kb = bs[bs.size() - 2], nn = bs[bs.size() - 1];
  BAFNET_CHECK(kk == kb, "matmul inner dims differ: " << shape_str(as) << " x " << shape_str(bs));
  const bool shared_b = b.rank() == 2 && a.rank() > 2;
  if (!shared_b && a.rank() != b.rank())
    BAFNET_CHECK(false, "matmul batch ranks differ: " << shape_str(as) << " x " << shape_str(bs));
  int64_t batch = 1;
  Shape os;
  for (size_t i = 0; i + 2 < as.size(); ++i) {
    if (!shared_b)
      BAFNET_CHECK(as[i] == bs[i], "matmul batch dims differ: " << shape_str(as) << " x "
                                                                << shape_str(bs));
    batch *= as[i];
    os.push_back(as[i]);
  }
  os.push_back(mm);
  os.push_back(nn);

  std::vector<T> y((size_t)(batch * mm * nn));
  if (batch == 1 || shared_b) {
    // One flat GEMM: (batch*m, k) x (k, n).
    gemm(false, false, batch * mm, nn, kk, T(1), a.data(), kk, b.data(), nn, T(0), y.data(),
         nn);
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < batch; ++i)
      gemm_raw(false, false, mm, nn, kk, T(1), a.data() + i * mm * kk, kk,
               b.data() + i * kk * nn, nn, T(0), y.data() + i * mm * nn, nn);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(os, std::move(y), {a, b}, [an, bn, batch, mm, nn, kk,
                                                   shared_b](Node<T>& out) {
    const T* dy = out.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      if (batch == 1 || shared_b) {
        gemm(false, true, batch * mm, kk, nn, T(1), dy, nn, bn->data.data(), nn, T(1),
             an->grad.data(), kk);
      } else {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < batch; ++i)
          gemm_raw(false, true, mm, kk, nn, T(1), dy + i * mm * nn, nn,
                   bn->data.data() + i * kk * nn, nn, T(1), an->grad.data() + i * mm * kk, kk);
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      if (batch == 1 || shared_b) {
        gemm(true, false, kk, nn, batch * mm, T(1), an->data.data(), kk, dy, nn, T(1),
             bn->grad.data(), nn);
      } else {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < batch; ++i)
          gemm_raw(true, false, kk, nn, mm, T(1), an->data.data() + i * mm * kk, kk,
                   dy + i * mm * nn, nn, T(1), bn->grad.data() + i * kk * nn, nn);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// global_avg_pool
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  BAFNET_CHECK(x.rank() == 4, "global_avg_pool expects (B,C,H,W)");
  const int64_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> y((size_t)(batch * c));
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < batch * c; ++p) {
    const T* row = x.data() + p * hw;
    double acc = 0;
    for (int64_t i = 0; i < hw; ++i) acc += row[i];
    y[(size_t)p] = (T)(acc / hw);
  }
  auto xn = x.node();
  return make_result<T>({batch, c, 1, 1}, std::move(y), {x}, [xn, batch, c, hw](Node<T>& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T* dy = out.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < batch * c; ++p) {
      T* dst = xn->grad.data() + p * hw;
      const T g = dy[p] / (T)hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// concat / narrow
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  BAFNET_CHECK(!xs.empty(), "concat of nothing");
  const int rank = xs[0].rank();
  if (axis < 0) axis += rank;
  BAFNET_CHECK(axis >= 0 && axis < rank, "concat axis out of range");
  Shape os = xs[0].shape();
  int64_t total = 0;
  for (const auto& t : xs) {
    BAFNET_CHECK(t.rank() == rank, "concat rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis)
        BAFNET_CHECK(t.dim(i) == os[(size_t)i], "concat shape mismatch at axis " << i << ": "
                                                    << shape_str(t.shape()));
    total += t.dim(axis);
  }
  os[(size_t)axis] = total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[(size_t)i];
  for (int i = axis + 1; i < rank; ++i) inner *= os[(size_t)i];

  std::vector<T> y((size_t)shape_numel(os));
  int64_t off = 0;
  for (const auto& t : xs) {
    const int64_t len = t.dim(axis) * inner;
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(y.data() + o * total * inner + off, t.data() + o * len, (size_t)len * sizeof(T));
    off += len;
  }
  std::vector<NodePtr<T>> nodes;
  std::vector<int64_t> lens;
  for (const auto& t : xs) {
    nodes.push_back(t.node());
    lens.push_back(t.dim(axis) * inner);
  }
  return make_result<T>(os, std::move(y), xs, [nodes, lens, outer, total, inner](Node<T>& out) {
    const T* dy = out.grad.data();
    int64_t off = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i]->requires_grad) {
        nodes[i]->ensure_grad();
        T* dst = nodes[i]->grad.data();
        const int64_t len = lens[i];
#pragma omp parallel for schedule(static)
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = dy + o * total * inner + off;
          T* d = dst + o * len;
          for (int64_t j = 0; j < len; ++j) d[j] += src[j];
        }
      }
      off += lens[i];
    }
  });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  const int rank = x.rank();
  if (axis < 0) axis += rank;
  BAFNET_CHECK(axis >= 0 && axis < rank, "narrow axis out of range");
  BAFNET_CHECK(start >= 0 && len > 0 && start + len <= x.dim(axis),
               "narrow range [" << start << "," << start + len << ") exceeds dim "
                                << x.dim(axis));
  Shape os = x.shape();
  os[(size_t)axis] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(i);
  const int64_t src_stride = x.dim(axis) * inner;
  std::vector<T> y((size_t)(outer * len * inner));
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(y.data() + o * len * inner, x.data() + o * src_stride + start * inner,
                (size_t)(len * inner) * sizeof(T));
  auto xn = x.node();
  return make_result<T>(os, std::move(y), {x},
                        [xn, outer, inner, len, start, src_stride](Node<T>& out) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          const T* dy = out.grad.data();
#pragma omp parallel for schedule(static)
                          for (int64_t o = 0; o < outer; ++o) {
                            T* dst = xn->grad.data() + o * src_stride + start * inner;
                            const T* src = dy + o * len * inner;
                            for (int64_t j = 0; j < len * inner; ++j) dst[j] += src[j];
                          }
                        });
}

// ---------------------------------------------------------------------------
// reductions / reshape / permute / lookup
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += x.data()[i];
  auto xn = x.node();
  return make_result<T>({1}, {(T)acc}, {x}, [xn, n](Node<T>& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T g = out.grad[0];
    T* dst = xn->grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dst[i] += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / (T)x.numel());
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  BAFNET_CHECK(shape_numel(shape) == x.numel(), "reshape " << shape_str(x.shape()) << " -> "
                                                           << shape_str(shape));
  std::vector<T> y = x.vec();
  auto xn = x.node();
  const int64_t n = x.numel();
  return make_result<T>(std::move(shape), std::move(y), {x}, [xn, n](Node<T>& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T* dy = out.grad.data();
    T* dst = xn->grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dst[i] += dy[i];
  });
}

namespace {

template <typename T>
void permute_copy(const T* src, const Shape& in_shape, const std::vector<int>& axes, T* dst) {
  const int rank = (int)in_shape.size();
  Shape os(rank);
  for (int i = 0; i < rank; ++i) os[(size_t)i] = in_shape[(size_t)axes[(size_t)i]];
  auto si = contiguous_strides(in_shape);
  auto so = contiguous_strides(os);
  // stride in the source for each output axis
  std::vector<int64_t> step((size_t)rank);
  for (int i = 0; i < rank; ++i) step[(size_t)i] = si[(size_t)axes[(size_t)i]];
  const int64_t n = shape_numel(in_shape);
  const int64_t inner = os[(size_t)rank - 1];
  const int64_t inner_step = step[(size_t)rank - 1];
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < n / inner; ++r) {
    int64_t rem = r, src_off = 0;
    for (int d = 0; d < rank - 1; ++d) {
      int64_t idx = rem / (so[(size_t)d] / inner);
      rem -= idx * (so[(size_t)d] / inner);
      src_off += idx * step[(size_t)d];
    }
    T* out_row = dst + r * inner;
    for (int64_t i = 0; i < inner; ++i) out_row[i] = src[src_off + i * inner_step];
  }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const int rank = x.rank();
  BAFNET_CHECK((int)axes.size() == rank, "permute needs " << rank << " axes");
  std::vector<bool> seen((size_t)rank, false);
  Shape os((size_t)rank);
  for (int i = 0; i < rank; ++i) {
    BAFNET_CHECK(axes[(size_t)i] >= 0 && axes[(size_t)i] < rank && !seen[(size_t)axes[(size_t)i]],
                 "permute axes must be a permutation");
    seen[(size_t)axes[(size_t)i]] = true;
    os[(size_t)i] = x.dim(axes[(size_t)i]);
  }
  std::vector<T> y((size_t)x.numel());
  permute_copy(x.data(), x.shape(), axes, y.data());
  // inverse permutation maps output gradient back onto the input layout
  std::vector<int> inv((size_t)rank);
  for (int i = 0; i < rank; ++i) inv[(size_t)axes[(size_t)i]] = i;
  auto xn = x.node();
  return make_result<T>(os, std::move(y), {x}, [xn, inv, os](Node<T>& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    std::vector<T> tmp(out.grad.size());
    permute_copy(out.grad.data(), os, inv, tmp.data());
    T* dst = xn->grad.data();
    const int64_t n = (int64_t)tmp.size();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dst[i] += tmp[(size_t)i];
  });
}

template <typename T>
Tensor<T> rows_lookup(const Tensor<T>& table, const std::vector<int64_t>& indices) {
  BAFNET_CHECK(table.rank() == 2, "rows_lookup expects a 2-d table");
  const int64_t rows = table.dim(0), width = table.dim(1);
  std::vector<T> y(indices.size() * (size_t)width);
  for (size_t i = 0; i < indices.size(); ++i) {
    BAFNET_CHECK(indices[i] >= 0 && indices[i] < rows, "rows_lookup index out of range");
    std::memcpy(y.data() + i * (size_t)width, table.data() + indices[i] * width,
                (size_t)width * sizeof(T));
  }
  auto tn = table.node();
  auto idx = indices;
  return make_result<T>({(int64_t)indices.size(), width}, std::move(y), {table},
                        [tn, idx, width](Node<T>& out) {
                          if (!tn->requires_grad) return;
                          tn->ensure_grad();
                          const T* dy = out.grad.data();
                          for (size_t i = 0; i < idx.size(); ++i) {
                            T* dst = tn->grad.data() + idx[i] * width;
                            const T* src = dy + i * (size_t)width;
                            for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
Tensor<T> custom_op(Shape shape, std::vector<T> data, std::vector<Tensor<T>> parents,
                    std::function<void(detail::Node<T>&)> backward_fn) {
  return make_result<T>(std::move(shape), std::move(data), std::move(parents),
                        std::move(backward_fn));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss, bool free_graph) {
  BAFNET_CHECK(loss.numel() == 1, "backward needs a scalar loss, got "
                                      << shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reverse post-order is a topological order in
  // which every consumer precedes its inputs.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    // Only leaf gradients accumulate across calls; op outputs carry
    // per-invocation gradients.
    if (!node->leaf) {
      node->grad = {};
      if (free_graph) {
        node->data = {};
        node->backward_fn = nullptr;
      }
    }
  }
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite((double)x.data()[i])) return false;
  return true;
}

template <typename T>
void check_finite(const Tensor<T>& x, const char* what) {
  if (!all_finite(x)) throw std::runtime_error(std::string(what) + ": non-finite value");
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define BAFNET_INSTANTIATE(T)                                                               \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                               const ConvSpec&);                                            \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int64_t, int64_t);               \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, double);                         \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                   Tensor<T>*, Tensor<T>*, bool, T, T);                    \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                   T);                                                      \
  template Tensor<T> relu<T>(const Tensor<T>&);                                            \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                            \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                         \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                    \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                        \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                 \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                             \
  template Tensor<T> mean<T>(const Tensor<T>&);                                            \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                  \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);                \
  template Tensor<T> narrow<T>(const Tensor<T>&, int, int64_t, int64_t);                   \
  template Tensor<T> rows_lookup<T>(const Tensor<T>&, const std::vector<int64_t>&);        \
  template Tensor<T> custom_op<T>(Shape, std::vector<T>, std::vector<Tensor<T>>,           \
                                  std::function<void(detail::Node<T>&)>);                  \
  template void backward<T>(const Tensor<T>&, bool);                                       \
  template bool all_finite<T>(const Tensor<T>&);                                           \
  template void check_finite<T>(const Tensor<T>&, const char*);

BAFNET_INSTANTIATE(float)
BAFNET_INSTANTIATE(double)

#undef BAFNET_INSTANTIATE

}  // namespace bafnet

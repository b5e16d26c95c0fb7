#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vseg/errors.hpp"
#include "vseg/kernel/blas.hpp"
#include "vseg/kernel/tensor.hpp"
#include "vseg/rng.hpp"

namespace vseg::ops {

namespace detail {

template <class T>
using NodePtr = std::shared_ptr<vseg::detail::TensorNode<T>>;

struct Grid3 {
  std::size_t d = 0, h = 0, w = 0;
  std::size_t size() const { return d * h * w; }
  bool operator==(const Grid3&) const = default;
};

inline std::ptrdiff_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const auto span = static_cast<std::ptrdiff_t>(in + 2 * pad) - static_cast<std::ptrdiff_t>(k);
  if (span < 0) return 0;
  return span / static_cast<std::ptrdiff_t>(stride) + 1;
}

/// Geometry of a strided, zero-padded cross-correlation over a 3-d grid.
struct ConvGeometry {
  std::size_t channels = 0;  // input channels of the im2col side
  Grid3 in, out;
  std::size_t k = 0, stride = 1, pad = 0;

  std::size_t rows() const { return channels * k * k * k; }

  static ConvGeometry make(std::size_t channels, Grid3 in, std::size_t k, std::size_t stride, std::size_t pad) {
    ConvGeometry g{channels, in, {}, k, stride, pad};
    const auto od = out_extent(in.d, k, stride, pad), oh = out_extent(in.h, k, stride, pad),
               ow = out_extent(in.w, k, stride, pad);
    if (od < 1 || oh < 1 || ow < 1) {
      throw ShapeError("conv3d: non-positive output dims for input " + std::to_string(in.d) + "x" +
                       std::to_string(in.h) + "x" + std::to_string(in.w) + " k=" + std::to_string(k) +
                       " stride=" + std::to_string(stride) + " pad=" + std::to_string(pad));
    }
    g.out = {static_cast<std::size_t>(od), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
    return g;
  }

  /// Output depth slices per im2col chunk, bounding the column buffer size.
  std::size_t slices_per_chunk() const {
    constexpr std::size_t kMaxColumnElements = std::size_t{1} << 22;
    const std::size_t per_slice = rows() * out.h * out.w;
    return std::clamp<std::size_t>(kMaxColumnElements / std::max<std::size_t>(per_slice, 1), 1, out.d);
  }
};

// Gathers the receptive fields of output slices [od0, od1) into `cols`
// (rows() x positions, row-major).
template <class T>
void im2col(const ConvGeometry& g, const T* x, std::size_t od0, std::size_t od1, T* cols) {
  const std::size_t positions = (od1 - od0) * g.out.h * g.out.w;
  const auto s = static_cast<std::ptrdiff_t>(g.stride), p = static_cast<std::ptrdiff_t>(g.pad);
  const auto D = static_cast<std::ptrdiff_t>(g.in.d), H = static_cast<std::ptrdiff_t>(g.in.h),
             W = static_cast<std::ptrdiff_t>(g.in.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.in.size();
    for (std::size_t kd = 0; kd < g.k; ++kd)
      for (std::size_t kh = 0; kh < g.k; ++kh)
        for (std::size_t kw = 0; kw < g.k; ++kw, ++row) {
          T* out = cols + row * positions;
          for (std::size_t od = od0; od < od1; ++od) {
            const auto id = static_cast<std::ptrdiff_t>(od) * s - p + static_cast<std::ptrdiff_t>(kd);
            if (id < 0 || id >= D) {
              std::fill_n(out, g.out.h * g.out.w, T(0));
              out += g.out.h * g.out.w;
              continue;
            }
            for (std::size_t oh = 0; oh < g.out.h; ++oh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh) * s - p + static_cast<std::ptrdiff_t>(kh);
              if (ih < 0 || ih >= H) {
                std::fill_n(out, g.out.w, T(0));
                out += g.out.w;
                continue;
              }
              const T* src = xc + (id * H + ih) * W;
              for (std::size_t ow = 0; ow < g.out.w; ++ow) {
                const auto iw = static_cast<std::ptrdiff_t>(ow) * s - p + static_cast<std::ptrdiff_t>(kw);
                *out++ = (iw >= 0 && iw < W) ? src[iw] : T(0);
              }
            }
          }
        }
  }
}

// Scatter-adds columns back onto the input grid (adjoint of im2col).
template <class T>
void col2im(const ConvGeometry& g, const T* cols, std::size_t od0, std::size_t od1, T* x) {
  const std::size_t positions = (od1 - od0) * g.out.h * g.out.w;
  const auto s = static_cast<std::ptrdiff_t>(g.stride), p = static_cast<std::ptrdiff_t>(g.pad);
  const auto D = static_cast<std::ptrdiff_t>(g.in.d), H = static_cast<std::ptrdiff_t>(g.in.h),
             W = static_cast<std::ptrdiff_t>(g.in.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* xc = x + c * g.in.size();
    for (std::size_t kd = 0; kd < g.k; ++kd)
      for (std::size_t kh = 0; kh < g.k; ++kh)
        for (std::size_t kw = 0; kw < g.k; ++kw, ++row) {
          const T* in = cols + row * positions;
          for (std::size_t od = od0; od < od1; ++od) {
            const auto id = static_cast<std::ptrdiff_t>(od) * s - p + static_cast<std::ptrdiff_t>(kd);
            if (id < 0 || id >= D) {
              in += g.out.h * g.out.w;
              continue;
            }
            for (std::size_t oh = 0; oh < g.out.h; ++oh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh) * s - p + static_cast<std::ptrdiff_t>(kh);
              if (ih < 0 || ih >= H) {
                in += g.out.w;
                continue;
              }
              T* dst = xc + (id * H + ih) * W;
              for (std::size_t ow = 0; ow < g.out.w; ++ow, ++in) {
                const auto iw = static_cast<std::ptrdiff_t>(ow) * s - p + static_cast<std::ptrdiff_t>(kw);
                if (iw >= 0 && iw < W) dst[iw] += *in;
              }
            }
          }
        }
  }
}

inline Grid3 spatial(const Shape& s) { return {s[2], s[3], s[4]}; }

inline void require_rank5(const Shape& s, const char* op) {
  if (s.size() != 5) throw ShapeError(std::string(op) + ": expected [N,C,D,H,W], got " + to_string(s));
}

inline int as_int(std::size_t v) { return static_cast<int>(v); }

}  // namespace detail

/// 3-d cross-correlation, x[N,C,D,H,W] * w[F,C,k,k,k] + b[F].
template <class T>
Tensor<T> conv3d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                 std::size_t pad) {
  using namespace detail;
  require_rank5(x.shape(), "conv3d");
  require_rank5(w.shape(), "conv3d weight");
  const std::size_t N = x.dim(0), C = x.dim(1), F = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C) {
    throw ShapeError("conv3d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " + std::to_string(C));
  }
  if (k % 2 == 0 || w.dim(3) != k || w.dim(4) != k) throw ShapeError("conv3d: kernel must be cubic with odd size");
  if (b.numel() != F) throw ShapeError("conv3d: bias length must equal output channels");
  if (stride == 0) throw ShapeError("conv3d: stride must be positive");
  const auto g = ConvGeometry::make(C, spatial(x.shape()), k, stride, pad);
  const std::size_t P = g.out.size(), rows = g.rows(), chunk = g.slices_per_chunk();

  Tensor<T> y({N, F, g.out.d, g.out.h, g.out.w});
  auto& yv = y.mutable_values();
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  std::vector<T> cols(rows * chunk * g.out.h * g.out.w);
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = xv.data() + n * C * g.in.size();
    T* yn = yv.data() + n * F * P;
    for (std::size_t od0 = 0; od0 < g.out.d; od0 += chunk) {
      const std::size_t od1 = std::min(od0 + chunk, g.out.d);
      const std::size_t pc = (od1 - od0) * g.out.h * g.out.w, off = od0 * g.out.h * g.out.w;
      im2col(g, xn, od0, od1, cols.data());
      blas::gemm<T>(false, false, as_int(F), as_int(pc), as_int(rows), T(1), wv.data(), as_int(rows), cols.data(),
                    as_int(pc), T(0), yn + off, as_int(P));
    }
    for (std::size_t f = 0; f < F; ++f) {
      T* yf = yn + f * P;
      for (std::size_t i = 0; i < P; ++i) yf[i] += bv[f];
    }
  }

  if (tape && tape->wants(x, w, b)) {
    auto xn_ = x.node(), wn_ = w.node(), bn_ = b.node(), yn_ = y.node();
    tape->record("conv3d", {xn_, wn_, bn_}, y, [=] {
      const auto& dy = yn_->grad;
      std::vector<T> buf(rows * chunk * g.out.h * g.out.w);
      for (std::size_t n = 0; n < N; ++n) {
        const T* dyn = dy.data() + n * F * P;
        if (bn_->requires_grad) {
          for (std::size_t f = 0; f < F; ++f) {
            T acc = 0;
            for (std::size_t i = 0; i < P; ++i) acc += dyn[f * P + i];
            bn_->grad[f] += acc;
          }
        }
        for (std::size_t od0 = 0; od0 < g.out.d; od0 += chunk) {
          const std::size_t od1 = std::min(od0 + chunk, g.out.d);
          const std::size_t pc = (od1 - od0) * g.out.h * g.out.w, off = od0 * g.out.h * g.out.w;
          if (wn_->requires_grad) {
            im2col(g, xn_->value.data() + n * C * g.in.size(), od0, od1, buf.data());
            blas::gemm<T>(false, true, as_int(F), as_int(rows), as_int(pc), T(1), dyn + off, as_int(P), buf.data(),
                          as_int(pc), T(1), wn_->grad.data(), as_int(rows));
          }
          if (xn_->requires_grad) {
            blas::gemm<T>(true, false, as_int(rows), as_int(pc), as_int(F), T(1), wn_->value.data(), as_int(rows),
                          dyn + off, as_int(P), T(0), buf.data(), as_int(pc));
            col2im(g, buf.data(), od0, od1, xn_->grad.data() + n * C * g.in.size());
          }
        }
      }
    });
  }
  return y;
}

/// Transposed convolution with stride 2: the exact adjoint of
/// conv3d(stride 2, pad k/2) whose weight has this layout, w[Cin,Cout,k,k,k].
/// Output spatial dims are twice the input's.
template <class T>
Tensor<T> conv3d_transpose(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           std::size_t stride = 2) {
  using namespace detail;
  require_rank5(x.shape(), "conv3d_transpose");
  require_rank5(w.shape(), "conv3d_transpose weight");
  if (stride != 2) throw ShapeError("conv3d_transpose: only stride 2 is supported");
  const std::size_t N = x.dim(0), Cin = x.dim(1), Cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != Cin) {
    throw ShapeError("conv3d_transpose: weight expects " + std::to_string(w.dim(0)) + " input channels, got " +
                     std::to_string(Cin));
  }
  if (k % 2 == 0 || w.dim(3) != k || w.dim(4) != k) throw ShapeError("conv3d_transpose: kernel must be cubic with odd size");
  if (b.numel() != Cout) throw ShapeError("conv3d_transpose: bias length must equal output channels");
  const Grid3 small = spatial(x.shape());
  const Grid3 big{small.d * 2, small.h * 2, small.w * 2};
  const auto g = ConvGeometry::make(Cout, big, k, 2, k / 2);
  if (!(g.out == small)) throw ShapeError("conv3d_transpose: geometry does not invert");
  const std::size_t Ps = small.size(), Pb = big.size(), rows = g.rows(), chunk = g.slices_per_chunk();

  Tensor<T> y({N, Cout, big.d, big.h, big.w});
  auto& yv = y.mutable_values();
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  std::vector<T> cols(rows * chunk * small.h * small.w);
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = xv.data() + n * Cin * Ps;
    T* yn = yv.data() + n * Cout * Pb;
    for (std::size_t od0 = 0; od0 < small.d; od0 += chunk) {
      const std::size_t od1 = std::min(od0 + chunk, small.d);
      const std::size_t pc = (od1 - od0) * small.h * small.w, off = od0 * small.h * small.w;
      blas::gemm<T>(true, false, as_int(rows), as_int(pc), as_int(Cin), T(1), wv.data(), as_int(rows), xn + off,
                    as_int(Ps), T(0), cols.data(), as_int(pc));
      col2im(g, cols.data(), od0, od1, yn);
    }
    for (std::size_t c = 0; c < Cout; ++c) {
      T* yc = yn + c * Pb;
      for (std::size_t i = 0; i < Pb; ++i) yc[i] += bv[c];
    }
  }

  if (tape && tape->wants(x, w, b)) {
    auto xn_ = x.node(), wn_ = w.node(), bn_ = b.node(), yn_ = y.node();
    tape->record("conv3d_transpose", {xn_, wn_, bn_}, y, [=] {
      const auto& dy = yn_->grad;
      std::vector<T> buf(rows * chunk * small.h * small.w);
      for (std::size_t n = 0; n < N; ++n) {
        const T* dyn = dy.data() + n * Cout * Pb;
        if (bn_->requires_grad) {
          for (std::size_t c = 0; c < Cout; ++c) {
            T acc = 0;
            for (std::size_t i = 0; i < Pb; ++i) acc += dyn[c * Pb + i];
            bn_->grad[c] += acc;
          }
        }
        if (!xn_->requires_grad && !wn_->requires_grad) continue;
        for (std::size_t od0 = 0; od0 < small.d; od0 += chunk) {
          const std::size_t od1 = std::min(od0 + chunk, small.d);
          const std::size_t pc = (od1 - od0) * small.h * small.w, off = od0 * small.h * small.w;
          im2col(g, dyn, od0, od1, buf.data());
          if (xn_->requires_grad) {
            blas::gemm<T>(false, false, as_int(Cin), as_int(pc), as_int(rows), T(1), wn_->value.data(), as_int(rows),
                          buf.data(), as_int(pc), T(1), xn_->grad.data() + n * Cin * Ps + off, as_int(Ps));
          }
          if (wn_->requires_grad) {
            blas::gemm<T>(false, true, as_int(Cin), as_int(rows), as_int(pc), T(1),
                          xn_->value.data() + n * Cin * Ps + off, as_int(Ps), buf.data(), as_int(pc), T(1),
                          wn_->grad.data(), as_int(rows));
          }
        }
      }
    });
  }
  return y;
}

/// Loop-nest cross-correlation without im2col or BLAS. Forward only; this
/// is the definition the fast path is tested against.
template <class T>
Tensor<T> conv3d_direct(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                        std::size_t pad) {
  using namespace detail;
  require_rank5(x.shape(), "conv3d_direct");
  const std::size_t N = x.dim(0), C = x.dim(1), F = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C) throw ShapeError("conv3d_direct: channel mismatch");
  const auto g = ConvGeometry::make(C, spatial(x.shape()), k, stride, pad);
  Tensor<T> y({N, F, g.out.d, g.out.h, g.out.w});
  auto& yv = y.mutable_values();
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto in = [&](std::size_t n, std::size_t c, std::ptrdiff_t d, std::ptrdiff_t h, std::ptrdiff_t ww) -> T {
    if (d < 0 || h < 0 || ww < 0 || d >= static_cast<std::ptrdiff_t>(g.in.d) ||
        h >= static_cast<std::ptrdiff_t>(g.in.h) || ww >= static_cast<std::ptrdiff_t>(g.in.w))
      return T(0);
    return xv[(((n * C + c) * g.in.d + d) * g.in.h + h) * g.in.w + ww];
  };
  const auto s = static_cast<std::ptrdiff_t>(stride), p = static_cast<std::ptrdiff_t>(pad);
  std::size_t o = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t od = 0; od < g.out.d; ++od)
        for (std::size_t oh = 0; oh < g.out.h; ++oh)
          for (std::size_t ow = 0; ow < g.out.w; ++ow, ++o) {
            double acc = b.values()[f];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t kd = 0; kd < k; ++kd)
                for (std::size_t kh = 0; kh < k; ++kh)
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    acc += static_cast<double>(wv[(((f * C + c) * k + kd) * k + kh) * k + kw]) *
                           in(n, c, static_cast<std::ptrdiff_t>(od) * s - p + static_cast<std::ptrdiff_t>(kd),
                              static_cast<std::ptrdiff_t>(oh) * s - p + static_cast<std::ptrdiff_t>(kh),
                              static_cast<std::ptrdiff_t>(ow) * s - p + static_cast<std::ptrdiff_t>(kw));
                  }
            yv[o] = static_cast<T>(acc);
          }
  return y;
}

/// Per-sample, per-channel normalization over the spatial axes.
template <class T>
Tensor<T> instance_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                        double eps = 1e-5) {
  detail::require_rank5(x.shape(), "instance_norm");
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3) * x.dim(4);
  if (gamma.numel() != C || beta.numel() != C) throw ShapeError("instance_norm: gamma/beta length must equal channels");
  if (S < 2) throw ShapeError("instance_norm: spatial volume must be at least 2 voxels");
  Tensor<T> y(x.shape());
  std::vector<double> mean(N * C), inv_std(N * C);
  const auto& xv = x.values();
  auto& yv = y.mutable_values();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* xs = xv.data() + nc * S;
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < S; ++i) sum += xs[i];
    const double m = sum / static_cast<double>(S);
    for (std::size_t i = 0; i < S; ++i) sq += (xs[i] - m) * (xs[i] - m);
    const double is = 1.0 / std::sqrt(sq / static_cast<double>(S) + eps);
    mean[nc] = m;
    inv_std[nc] = is;
    const double ga = gamma.values()[nc % C], be = beta.values()[nc % C];
    T* ys = yv.data() + nc * S;
    for (std::size_t i = 0; i < S; ++i) ys[i] = static_cast<T>(ga * (xs[i] - m) * is + be);
  }
  if (tape && tape->wants(x, gamma, beta)) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node();
    tape->record("instance_norm", {xn, gn, bn}, y, [=] {
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        const std::size_t c = nc % C;
        const T* xs = xn->value.data() + nc * S;
        const T* dy = yn->grad.data() + nc * S;
        const double m = mean[nc], is = inv_std[nc], ga = gn->value[c];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t i = 0; i < S; ++i) {
          const double xhat = (xs[i] - m) * is;
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * xhat;
        }
        if (gn->requires_grad) gn->grad[c] += static_cast<T>(sum_dy_xhat);
        if (bn->requires_grad) bn->grad[c] += static_cast<T>(sum_dy);
        if (xn->requires_grad) {
          T* dx = xn->grad.data() + nc * S;
          const double inv_s = 1.0 / static_cast<double>(S);
          for (std::size_t i = 0; i < S; ++i) {
            const double xhat = (xs[i] - m) * is;
            dx[i] += static_cast<T>(ga * is * (dy[i] - sum_dy * inv_s - xhat * sum_dy_xhat * inv_s));
          }
        }
      }
    });
  }
  return y;
}

/// Exponential linear unit with alpha = 1.
template <class T>
Tensor<T> elu(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const auto& xv = x.values();
  auto& yv = y.mutable_values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] >= T(0) ? xv[i] : std::expm1(xv[i]);
  if (tape && tape->wants(x)) {
    auto xn = x.node(), yn = y.node();
    tape->record("elu", {xn}, y, [=] {
      for (std::size_t i = 0; i < xn->value.size(); ++i)
        xn->grad[i] += yn->grad[i] * (xn->value[i] >= T(0) ? T(1) : yn->value[i] + T(1));
    });
  }
  return y;
}

/// Softmax over axis 1 of [N,C,...].
template <class T>
Tensor<T> softmax_channels(Tape<T>* tape, const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("softmax_channels: expected [N,C,...]");
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.numel() / (N * C);
  Tensor<T> y(x.shape());
  const auto& xv = x.values();
  auto& yv = y.mutable_values();
  for (std::size_t n = 0; n < N; ++n) {
    const T* xs = xv.data() + n * C * S;
    T* ys = yv.data() + n * C * S;
    for (std::size_t i = 0; i < S; ++i) {
      T mx = xs[i];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, xs[c * S + i]);
      double z = 0;
      for (std::size_t c = 0; c < C; ++c) z += std::exp(static_cast<double>(xs[c * S + i] - mx));
      for (std::size_t c = 0; c < C; ++c) ys[c * S + i] = static_cast<T>(std::exp(static_cast<double>(xs[c * S + i] - mx)) / z);
    }
  }
  if (tape && tape->wants(x)) {
    auto xn = x.node(), yn = y.node();
    tape->record("softmax_channels", {xn}, y, [=] {
      for (std::size_t n = 0; n < N; ++n) {
        const T* ys = yn->value.data() + n * C * S;
        const T* dy = yn->grad.data() + n * C * S;
        T* dx = xn->grad.data() + n * C * S;
        for (std::size_t i = 0; i < S; ++i) {
          double dot = 0;
          for (std::size_t c = 0; c < C; ++c) dot += static_cast<double>(ys[c * S + i]) * dy[c * S + i];
          for (std::size_t c = 0; c < C; ++c) dx[c * S + i] += static_cast<T>(ys[c * S + i] * (dy[c * S + i] - dot));
        }
      }
    });
  }
  return y;
}

/// Zeroes each (n, c) channel with probability p; survivors are scaled by
/// 1/(1-p). p = 0 returns the input handle itself.
template <class T>
Tensor<T> channel_dropout(Tape<T>* tape, const Tensor<T>& x, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ShapeError("channel_dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  if (x.rank() < 2) throw ShapeError("channel_dropout: expected [N,C,...]");
  const std::size_t NC = x.dim(0) * x.dim(1), S = x.numel() / NC;
  std::vector<T> scale(NC);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& s : scale) s = rng.bernoulli(p) ? T(0) : keep;
  Tensor<T> y(x.shape());
  const auto& xv = x.values();
  auto& yv = y.mutable_values();
  for (std::size_t nc = 0; nc < NC; ++nc)
    for (std::size_t i = 0; i < S; ++i) yv[nc * S + i] = xv[nc * S + i] * scale[nc];
  if (tape && tape->wants(x)) {
    auto xn = x.node(), yn = y.node();
    tape->record("channel_dropout", {xn}, y, [=] {
      for (std::size_t nc = 0; nc < NC; ++nc)
        for (std::size_t i = 0; i < S; ++i) xn->grad[nc * S + i] += yn->grad[nc * S + i] * scale[nc];
    });
  }
  return y;
}

/// Concatenates along axis 1.
template <class T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || a.rank() != b.rank() || a.dim(0) != b.dim(0))
    throw ShapeError("concat_channels: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  for (std::size_t i = 2; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i)) throw ShapeError("concat_channels: spatial mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), S = a.numel() / (N * Ca);
  Shape shape = a.shape();
  shape[1] = Ca + Cb;
  Tensor<T> y(shape);
  auto& yv = y.mutable_values();
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.values().data() + n * Ca * S, Ca * S, yv.data() + n * (Ca + Cb) * S);
    std::copy_n(b.values().data() + n * Cb * S, Cb * S, yv.data() + (n * (Ca + Cb) + Ca) * S);
  }
  if (tape && tape->wants(a, b)) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    tape->record("concat_channels", {an, bn}, y, [=] {
      for (std::size_t n = 0; n < N; ++n) {
        const T* dy = yn->grad.data() + n * (Ca + Cb) * S;
        if (an->requires_grad)
          for (std::size_t i = 0; i < Ca * S; ++i) an->grad[n * Ca * S + i] += dy[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < Cb * S; ++i) bn->grad[n * Cb * S + i] += dy[Ca * S + i];
      }
    });
  }
  return y;
}

/// Elementwise sum of equal shapes.
template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> y(a.shape());
  auto& yv = y.mutable_values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = a.values()[i] + b.values()[i];
  if (tape && tape->wants(a, b)) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    tape->record("add", {an, bn}, y, [=] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < yn->grad.size(); ++i) bn->grad[i] += yn->grad[i];
    });
  }
  return y;
}

/// a + weight * b.
template <class T>
Tensor<T> add_scaled(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, double weight) {
  if (a.shape() != b.shape()) throw ShapeError("add_scaled: shape mismatch");
  Tensor<T> y(a.shape());
  auto& yv = y.mutable_values();
  const T wt = static_cast<T>(weight);
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = a.values()[i] + wt * b.values()[i];
  if (tape && tape->wants(a, b)) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    tape->record("add_scaled", {an, bn}, y, [=] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < yn->grad.size(); ++i) bn->grad[i] += wt * yn->grad[i];
    });
  }
  return y;
}

/// Elementwise product of equal shapes.
template <class T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  Tensor<T> y(a.shape());
  auto& yv = y.mutable_values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = a.values()[i] * b.values()[i];
  if (tape && tape->wants(a, b)) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    tape->record("mul", {an, bn}, y, [=] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i] * bn->value[i];
        if (bn->requires_grad) bn->grad[i] += yn->grad[i] * an->value[i];
      }
    });
  }
  return y;
}

/// Sum of all elements as a scalar tensor.
template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.values()) acc += v;
  Tensor<T> y(Shape{1}, static_cast<T>(acc));
  if (tape && tape->wants(x)) {
    auto xn = x.node(), yn = y.node();
    tape->record("sum", {xn}, y, [=] {
      for (auto& g : xn->grad) g += yn->grad[0];
    });
  }
  return y;
}

/// Weighted sum of all elements, sum(w * x), with constant weights.
template <class T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& x, const std::vector<T>& weights) {
  if (weights.size() != x.numel()) throw ShapeError("weighted_sum: weight length mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += static_cast<double>(weights[i]) * x.values()[i];
  Tensor<T> y(Shape{1}, static_cast<T>(acc));
  if (tape && tape->wants(x)) {
    auto xn = x.node(), yn = y.node();
    tape->record("weighted_sum", {xn}, y, [=] {
      for (std::size_t i = 0; i < weights.size(); ++i) xn->grad[i] += yn->grad[0] * weights[i];
    });
  }
  return y;
}

}  // namespace vseg::ops

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "crs/tensor.hpp"

namespace crs {

template <typename T>
TensorT<T> upsample_to(const TensorT<T>& input, int target_h, int target_w);

namespace detail {

template <typename T>
void require_rank(const TensorT<T>& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(strf("%s expects rank-%d tensor, got %s", what, rank,
                          shape_str(t.shape()).c_str()));
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;  // floor semantics
}

}  // namespace detail

/// Direct 2-D cross-correlation with zero padding. Output size uses floor
/// division, so stride-2 3x3 pad-1 convs halve even inputs (32 -> 16).
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>* bias,
                  int stride = 1, int padding = 0) {
  detail::require_rank(input, 4, "conv2d input");
  detail::require_rank(weight, 4, "conv2d weight");
  const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = weight.dim(0), Kh = weight.dim(2), Kw = weight.dim(3);
  if (weight.dim(1) != Cin)
    throw ShapeError(strf("conv2d: weight expects %d input channels, input has %d",
                          weight.dim(1), Cin));
  if (Kh % 2 == 0 || Kw % 2 == 0)
    throw ShapeError(strf("conv2d: kernel dims must be odd, got %dx%d", Kh, Kw));
  if (bias && (bias->rank() != 1 || bias->dim(0) != Cout))
    throw ShapeError("conv2d: bias shape must be [Cout]");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const int OH = detail::conv_out_dim(H, Kh, stride, padding);
  const int OW = detail::conv_out_dim(W, Kw, stride, padding);
  if (OH < 1 || OW < 1)
    throw ShapeError(strf("conv2d: %dx%d input with k=%d s=%d p=%d yields empty output", H, W,
                          Kh, stride, padding));

  TensorT<T> out({N, Cout, OH, OW});
  const T* x = input.data();
  const T* w = weight.data();
  T* y = out.data();
  const size_t in_plane = static_cast<size_t>(H) * W;
  const size_t out_plane = static_cast<size_t>(OH) * OW;

  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      T* yc = y + (static_cast<size_t>(n) * Cout + co) * out_plane;
      const T base = bias ? bias->data()[co] : T(0);
      std::fill(yc, yc + out_plane, base);
      for (int ci = 0; ci < Cin; ++ci) {
        const T* xc = x + (static_cast<size_t>(n) * Cin + ci) * in_plane;
        for (int kh = 0; kh < Kh; ++kh) {
          for (int kw = 0; kw < Kw; ++kw) {
            const T wv = w[((static_cast<size_t>(co) * Cin + ci) * Kh + kh) * Kw + kw];
            if (wv == T(0)) continue;
            int ow_lo = padding - kw > 0 ? (padding - kw + stride - 1) / stride : 0;
            int ow_hi = W - 1 - kw + padding;
            if (ow_hi < 0) continue;
            ow_hi = std::min(ow_hi / stride, OW - 1);
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * stride - padding + kh;
              if (ih < 0 || ih >= H) continue;
              // May wrap below zero and back; unsigned arithmetic keeps the
              // final indices (>= ow_lo*stride offset) in range.
              const size_t xrow = static_cast<size_t>(ih) * W + static_cast<size_t>(kw) -
                                  static_cast<size_t>(padding);
              T* yr = yc + static_cast<size_t>(oh) * OW;
              for (int ow = ow_lo; ow <= ow_hi; ++ow)
                yr[ow] += wv * xc[xrow + static_cast<size_t>(ow) * stride];
            }
          }
        }
      }
    }
  }
  detail::check_finite(out, "conv2d");

  TensorT<T> input_c = input;
  TensorT<T> weight_c = weight;
  TensorT<T> bias_c = bias ? *bias : TensorT<T>();
  auto backward_fn = [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    const T* xd = input_c.data();
    const T* wd = weight_c.data();
    T* gx = input_c.requires_grad() ? input_c.grad() : nullptr;
    T* gw = weight_c.requires_grad() ? weight_c.grad() : nullptr;
    T* gb = bias_c.defined() && bias_c.requires_grad() ? bias_c.grad() : nullptr;
    for (int n = 0; n < N; ++n) {
      for (int co = 0; co < Cout; ++co) {
        const T* gc = g + (static_cast<size_t>(n) * Cout + co) * out_plane;
        if (gb) {
          T acc = 0;
          for (size_t i = 0; i < out_plane; ++i) acc += gc[i];
          gb[co] += acc;
        }
        if (!gx && !gw) continue;
        for (int ci = 0; ci < Cin; ++ci) {
          const size_t xoff = (static_cast<size_t>(n) * Cin + ci) * in_plane;
          for (int kh = 0; kh < Kh; ++kh) {
            for (int kw = 0; kw < Kw; ++kw) {
              const size_t widx = ((static_cast<size_t>(co) * Cin + ci) * Kh + kh) * Kw + kw;
              const T wv = wd[widx];
              T wacc = 0;
              int ow_lo = padding - kw > 0 ? (padding - kw + stride - 1) / stride : 0;
              int ow_hi = W - 1 - kw + padding;
              if (ow_hi < 0) continue;
              ow_hi = std::min(ow_hi / stride, OW - 1);
              for (int oh = 0; oh < OH; ++oh) {
                const int ih = oh * stride - padding + kh;
                if (ih < 0 || ih >= H) continue;
                const size_t xrow = xoff + static_cast<size_t>(ih) * W +
                                    static_cast<size_t>(kw) - static_cast<size_t>(padding);
                const T* gr = gc + static_cast<size_t>(oh) * OW;
                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                  const size_t xi = xrow + static_cast<size_t>(ow) * stride;
                  wacc += gr[ow] * xd[xi];
                  if (gx) gx[xi] += gr[ow] * wv;
                }
              }
              if (gw) gw[widx] += wacc;
            }
          }
        }
      }
    }
  };
  if (bias)
    detail::record(out, {&input, &weight, bias}, std::move(backward_fn));
  else
    detail::record(out, {&input, &weight}, std::move(backward_fn));
  return out;
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride = 1, int padding = 0) {
  return conv2d(input, weight, &bias, stride, padding);
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, std::nullptr_t,
                  int stride = 1, int padding = 0) {
  return conv2d(input, weight, static_cast<const TensorT<T>*>(nullptr), stride, padding);
}

/// Non-overlapping average pooling. Windows larger than the input clamp to
/// it; trailing partial windows average only their valid elements. The mean
/// is computed relative to the window's first element, which makes pooling
/// a window of equal values return that value bit-for-bit.
template <typename T>
TensorT<T> avg_pool2d(const TensorT<T>& input, int window) {
  detail::require_rank(input, 4, "avg_pool2d");
  if (window < 1) throw ShapeError("avg_pool2d: window must be >= 1");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int wh = std::min(window, H), ww = std::min(window, W);
  const int OH = (H + wh - 1) / wh, OW = (W + ww - 1) / ww;

  TensorT<T> out({N, C, OH, OW});
  const T* x = input.data();
  T* y = out.data();
  const size_t in_plane = static_cast<size_t>(H) * W;
  const size_t out_plane = static_cast<size_t>(OH) * OW;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x + (static_cast<size_t>(n) * C + c) * in_plane;
      T* yc = y + (static_cast<size_t>(n) * C + c) * out_plane;
      for (int oh = 0; oh < OH; ++oh) {
        const int h0 = oh * wh, h1 = std::min(h0 + wh, H);
        for (int ow = 0; ow < OW; ++ow) {
          const int w0 = ow * ww, w1 = std::min(w0 + ww, W);
          const double base = static_cast<double>(xc[static_cast<size_t>(h0) * W + w0]);
          double acc = 0.0;
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w)
              acc += static_cast<double>(xc[static_cast<size_t>(h) * W + w]) - base;
          const int count = (h1 - h0) * (w1 - w0);
          yc[static_cast<size_t>(oh) * OW + ow] = static_cast<T>(base + acc / count);
        }
      }
    }
  }
  detail::check_finite(out, "avg_pool2d");

  TensorT<T> input_c = input;
  detail::record(out, {&input}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    T* gx = input_c.grad();
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const size_t xoff = (static_cast<size_t>(n) * C + c) * in_plane;
        const size_t yoff = (static_cast<size_t>(n) * C + c) * out_plane;
        for (int oh = 0; oh < OH; ++oh) {
          const int h0 = oh * wh, h1 = std::min(h0 + wh, H);
          for (int ow = 0; ow < OW; ++ow) {
            const int w0 = ow * ww, w1 = std::min(w0 + ww, W);
            const int count = (h1 - h0) * (w1 - w0);
            const T share = g[yoff + static_cast<size_t>(oh) * OW + ow] / static_cast<T>(count);
            for (int h = h0; h < h1; ++h)
              for (int w = w0; w < w1; ++w) gx[xoff + static_cast<size_t>(h) * W + w] += share;
          }
        }
      }
    }
  });
  return out;
}

/// Full-extent spatial mean; defined as avg_pool2d with the window clamped
/// to the whole feature map.
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& input) {
  detail::require_rank(input, 4, "global_avg_pool");
  return avg_pool2d(input, std::max(input.dim(2), input.dim(3)));
}

/// Nearest-neighbour upsampling by an integer factor.
template <typename T>
TensorT<T> upsample_nearest(const TensorT<T>& input, int factor) {
  detail::require_rank(input, 4, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  return upsample_to(input, input.dim(2) * factor, input.dim(3) * factor);
}

/// Nearest-neighbour upsampling to an arbitrary target resolution
/// (src index = floor(i * h / target_h)).
template <typename T>
TensorT<T> upsample_to(const TensorT<T>& input, int target_h, int target_w) {
  detail::require_rank(input, 4, "upsample_to");
  const int N = input.dim(0), C = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (target_h < h || target_w < w)
    throw ShapeError(strf("upsample_to: target %dx%d smaller than input %dx%d", target_h,
                          target_w, h, w));

  TensorT<T> out({N, C, target_h, target_w});
  std::vector<int> src_h(static_cast<size_t>(target_h)), src_w(static_cast<size_t>(target_w));
  for (int i = 0; i < target_h; ++i) src_h[static_cast<size_t>(i)] = (i * h) / target_h;
  for (int j = 0; j < target_w; ++j) src_w[static_cast<size_t>(j)] = (j * w) / target_w;

  const T* x = input.data();
  T* y = out.data();
  const size_t in_plane = static_cast<size_t>(h) * w;
  const size_t out_plane = static_cast<size_t>(target_h) * target_w;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xc = x + (static_cast<size_t>(n) * C + c) * in_plane;
      T* yc = y + (static_cast<size_t>(n) * C + c) * out_plane;
      for (int i = 0; i < target_h; ++i) {
        const T* xr = xc + static_cast<size_t>(src_h[static_cast<size_t>(i)]) * w;
        T* yr = yc + static_cast<size_t>(i) * target_w;
        for (int j = 0; j < target_w; ++j) yr[j] = xr[src_w[static_cast<size_t>(j)]];
      }
    }

  TensorT<T> input_c = input;
  detail::record(out, {&input}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    T* gx = input_c.grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const size_t xoff = (static_cast<size_t>(n) * C + c) * in_plane;
        const size_t yoff = (static_cast<size_t>(n) * C + c) * out_plane;
        for (int i = 0; i < target_h; ++i)
          for (int j = 0; j < target_w; ++j)
            gx[xoff + static_cast<size_t>(src_h[static_cast<size_t>(i)]) * w +
               src_w[static_cast<size_t>(j)]] += g[yoff + static_cast<size_t>(i) * target_w + j];
      }
  });
  return out;
}

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics (biased variance) and folds them into the running stats as
/// running = (1 - momentum) * running + momentum * batch. Eval mode applies
/// the running stats.
template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& input, const TensorT<T>& gamma, const TensorT<T>& beta,
                       TensorT<T>& running_mean, TensorT<T>& running_var, bool training,
                       double eps = 1e-5, double momentum = 0.1) {
  detail::require_rank(input, 4, "batchnorm2d");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    throw ShapeError(strf("batchnorm2d: per-channel params must have %d elements", C));

  const size_t plane = static_cast<size_t>(H) * W;
  const long m = static_cast<long>(N) * H * W;
  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(C), 0.0);
  auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(C), 0.0);
  const T* x = input.data();

  for (int c = 0; c < C; ++c) {
    double mu, va;
    if (training) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* xc = x + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) s += static_cast<double>(xc[i]);
      }
      mu = s / static_cast<double>(m);
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* xc = x + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(xc[i]) - mu;
          v += d * d;
        }
      }
      va = v / static_cast<double>(m);
      running_mean.data()[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean.data()[c]) +
                         momentum * mu);
      running_var.data()[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running_var.data()[c]) +
                         momentum * va);
    } else {
      mu = static_cast<double>(running_mean.data()[c]);
      va = static_cast<double>(running_var.data()[c]);
    }
    (*mean)[static_cast<size_t>(c)] = mu;
    (*invstd)[static_cast<size_t>(c)] = 1.0 / std::sqrt(va + eps);
  }

  TensorT<T> out({N, C, H, W});
  T* y = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xc = x + (static_cast<size_t>(n) * C + c) * plane;
      T* yc = y + (static_cast<size_t>(n) * C + c) * plane;
      const double g = static_cast<double>(gamma.data()[c]);
      const double b = static_cast<double>(beta.data()[c]);
      const double mu = (*mean)[static_cast<size_t>(c)];
      const double is = (*invstd)[static_cast<size_t>(c)];
      for (size_t i = 0; i < plane; ++i)
        yc[i] = static_cast<T>((static_cast<double>(xc[i]) - mu) * is * g + b);
    }
  detail::check_finite(out, "batchnorm2d");

  TensorT<T> input_c = input, gamma_c = gamma, beta_c = beta;
  detail::record(out, {&input, &gamma, &beta}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    const T* xd = input_c.data();
    T* gx = input_c.requires_grad() ? input_c.grad() : nullptr;
    T* gg = gamma_c.requires_grad() ? gamma_c.grad() : nullptr;
    T* gb = beta_c.requires_grad() ? beta_c.grad() : nullptr;
    for (int c = 0; c < C; ++c) {
      const double mu = (*mean)[static_cast<size_t>(c)];
      const double is = (*invstd)[static_cast<size_t>(c)];
      const double gm = static_cast<double>(gamma_c.data()[c]);
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < N; ++n) {
        const size_t off = (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double gi = static_cast<double>(g[off + i]);
          sum_g += gi;
          sum_gx += gi * (static_cast<double>(xd[off + i]) - mu) * is;
        }
      }
      if (gg) gg[c] += static_cast<T>(sum_gx);
      if (gb) gb[c] += static_cast<T>(sum_g);
      if (gx) {
        if (training) {
          const double mg = sum_g / static_cast<double>(m);
          const double mgx = sum_gx / static_cast<double>(m);
          for (int n = 0; n < N; ++n) {
            const size_t off = (static_cast<size_t>(n) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
              const double xhat = (static_cast<double>(xd[off + i]) - mu) * is;
              gx[off + i] += static_cast<T>(
                  gm * is * (static_cast<double>(g[off + i]) - mg - xhat * mgx));
            }
          }
        } else {
          for (int n = 0; n < N; ++n) {
            const size_t off = (static_cast<size_t>(n) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i)
              gx[off + i] += static_cast<T>(gm * is * static_cast<double>(g[off + i]));
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& input) {
  TensorT<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  const long n = input.numel();
  for (long i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);

  TensorT<T> input_c = input;
  detail::record(out, {&input}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    const T* xd = input_c.data();
    T* gx = input_c.grad();
    for (long i = 0; i < n; ++i)
      if (xd[i] > T(0)) gx[i] += g[i];
  });
  return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& input) {
  TensorT<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  const long n = input.numel();
  for (long i = 0; i < n; ++i) {
    const double v = static_cast<double>(x[i]);
    y[i] = static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                 : std::exp(v) / (1.0 + std::exp(v)));
  }
  detail::check_finite(out, "sigmoid");

  auto yd = out.data_buf();
  TensorT<T> input_c = input;
  detail::record(out, {&input}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    const T* yv = yd->data();
    T* gx = input_c.grad();
    for (long i = 0; i < n; ++i) gx[i] += g[i] * yv[i] * (T(1) - yv[i]);
  });
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(strf("add: shape mismatch %s vs %s", shape_str(a.shape()).c_str(),
                          shape_str(b.shape()).c_str()));
  TensorT<T> out(a.shape());
  const T* ad = a.data();
  const T* bd = b.data();
  T* y = out.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) y[i] = ad[i] + bd[i];
  detail::check_finite(out, "add");

  TensorT<T> a_c = a, b_c = b;
  detail::record(out, {&a, &b}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    if (a_c.requires_grad()) {
      T* ga = a_c.grad();
      for (long i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (b_c.requires_grad()) {
      T* gb = b_c.grad();
      for (long i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
  return out;
}

/// Elementwise product. Equal shapes multiply directly; the only broadcast
/// accepted is [N,C,1,1] against [N,C,H,W] (either order). Mismatched
/// spatial dims must be upsampled explicitly first.
template <typename T>
TensorT<T> mul_elementwise(const TensorT<T>& a, const TensorT<T>& b) {
  const bool equal = a.shape() == b.shape();
  bool a_is_gate = false;
  if (!equal) {
    auto nc11 = [](const TensorT<T>& t) {
      return t.rank() == 4 && t.dim(2) == 1 && t.dim(3) == 1;
    };
    const bool nc_match = a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) &&
                          a.dim(1) == b.dim(1);
    if (nc_match && nc11(a))
      a_is_gate = true;
    else if (!(nc_match && nc11(b)))
      throw ShapeError(strf(
          "mul_elementwise: shapes %s and %s are not equal and not a [N,C,1,1] broadcast; "
          "upsample explicitly first",
          shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
  }

  const TensorT<T>& full = a_is_gate ? b : a;
  const TensorT<T>& gate = a_is_gate ? a : b;
  TensorT<T> out(full.shape());
  const long n = full.numel();
  T* y = out.data();
  if (equal) {
    const T* ad = a.data();
    const T* bd = b.data();
    for (long i = 0; i < n; ++i) y[i] = ad[i] * bd[i];
  } else {
    const int N = full.dim(0), C = full.dim(1);
    const size_t plane = static_cast<size_t>(full.dim(2)) * full.dim(3);
    const T* fd = full.data();
    const T* gd = gate.data();
    for (int ni = 0; ni < N; ++ni)
      for (int c = 0; c < C; ++c) {
        const T gvv = gd[static_cast<size_t>(ni) * C + c];
        const size_t off = (static_cast<size_t>(ni) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) y[off + i] = fd[off + i] * gvv;
      }
  }
  detail::check_finite(out, "mul_elementwise");

  TensorT<T> a_c = a, b_c = b;
  detail::record(out, {&a, &b}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    if (equal) {
      if (a_c.requires_grad()) {
        T* ga = a_c.grad();
        const T* bd = b_c.data();
        for (long i = 0; i < n; ++i) ga[i] += g[i] * bd[i];
      }
      if (b_c.requires_grad()) {
        T* gb = b_c.grad();
        const T* ad = a_c.data();
        for (long i = 0; i < n; ++i) gb[i] += g[i] * ad[i];
      }
      return;
    }
    TensorT<T>& full_c = a_is_gate ? b_c : a_c;
    TensorT<T>& gate_c = a_is_gate ? a_c : b_c;
    const int N = full_c.dim(0), C = full_c.dim(1);
    const size_t plane = static_cast<size_t>(full_c.dim(2)) * full_c.dim(3);
    for (int ni = 0; ni < N; ++ni)
      for (int c = 0; c < C; ++c) {
        const size_t off = (static_cast<size_t>(ni) * C + c) * plane;
        const size_t gi = static_cast<size_t>(ni) * C + c;
        if (full_c.requires_grad()) {
          T* gf = full_c.grad();
          const T gvv = gate_c.data()[gi];
          for (size_t i = 0; i < plane; ++i) gf[off + i] += g[off + i] * gvv;
        }
        if (gate_c.requires_grad()) {
          T acc = 0;
          const T* fd = full_c.data();
          for (size_t i = 0; i < plane; ++i) acc += g[off + i] * fd[off + i];
          gate_c.grad()[gi] += acc;
        }
      }
  });
  return out;
}

/// Fully connected layer: input [N,F] x weight [F,G] + bias [G].
template <typename T>
TensorT<T> linear(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias) {
  detail::require_rank(input, 2, "linear input");
  detail::require_rank(weight, 2, "linear weight");
  const int N = input.dim(0), F = input.dim(1), G = weight.dim(1);
  if (weight.dim(0) != F)
    throw ShapeError(strf("linear: weight expects %d input features, input has %d",
                          weight.dim(0), F));
  if (bias.numel() != G) throw ShapeError("linear: bias shape must be [G]");

  TensorT<T> out({N, G});
  const T* x = input.data();
  const T* w = weight.data();
  T* y = out.data();
  for (int n = 0; n < N; ++n) {
    T* yr = y + static_cast<size_t>(n) * G;
    for (int g = 0; g < G; ++g) yr[g] = bias.data()[g];
    const T* xr = x + static_cast<size_t>(n) * F;
    for (int f = 0; f < F; ++f) {
      const T xv = xr[f];
      const T* wr = w + static_cast<size_t>(f) * G;
      for (int g = 0; g < G; ++g) yr[g] += xv * wr[g];
    }
  }
  detail::check_finite(out, "linear");

  TensorT<T> input_c = input, weight_c = weight, bias_c = bias;
  detail::record(out, {&input, &weight, &bias}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    for (int n = 0; n < N; ++n) {
      const T* gr = g + static_cast<size_t>(n) * G;
      if (bias_c.requires_grad()) {
        T* gb = bias_c.grad();
        for (int k = 0; k < G; ++k) gb[k] += gr[k];
      }
      const T* xr = input_c.data() + static_cast<size_t>(n) * F;
      for (int f = 0; f < F; ++f) {
        const T* wr = weight_c.data() + static_cast<size_t>(f) * G;
        if (input_c.requires_grad()) {
          T acc = 0;
          for (int k = 0; k < G; ++k) acc += gr[k] * wr[k];
          input_c.grad()[static_cast<size_t>(n) * F + f] += acc;
        }
        if (weight_c.requires_grad()) {
          T* gw = weight_c.grad() + static_cast<size_t>(f) * G;
          const T xv = xr[f];
          for (int k = 0; k < G; ++k) gw[k] += xv * gr[k];
        }
      }
    }
  });
  return out;
}

/// Shape change with identical element order (values copied).
template <typename T>
TensorT<T> reshape(const TensorT<T>& input, Shape new_shape) {
  if (shape_numel(new_shape) != input.numel())
    throw ShapeError(strf("reshape: %s -> %s changes element count",
                          shape_str(input.shape()).c_str(), shape_str(new_shape).c_str()));
  TensorT<T> out = TensorT<T>::from(std::move(new_shape), input.vec());

  TensorT<T> input_c = input;
  detail::record(out, {&input}, [=](const std::vector<T>& gv) mutable {
    const T* g = gv.data();
    T* gx = input_c.grad();
    const long n = input_c.numel();
    for (long i = 0; i < n; ++i) gx[i] += g[i];
  });
  return out;
}

/// Mean over the batch of -log softmax(logits)[label], max-stabilized.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
  detail::require_rank(logits, 2, "cross_entropy logits");
  const int N = logits.dim(0), K = logits.dim(1);
  if (K < 2) throw ValueError("cross_entropy: need at least 2 classes");
  if (static_cast<int>(labels.size()) != N)
    throw ValueError(strf("cross_entropy: %zu labels for batch of %d", labels.size(), N));
  for (int n = 0; n < N; ++n)
    if (labels[static_cast<size_t>(n)] < 0 || labels[static_cast<size_t>(n)] >= K)
      throw ValueError(strf("cross_entropy: label %d out of range [0,%d)",
                            labels[static_cast<size_t>(n)], K));

  const T* x = logits.data();
  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * K);
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    const T* xr = x + static_cast<size_t>(n) * K;
    double mx = static_cast<double>(xr[0]);
    for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(xr[k]));
    double denom = 0.0;
    for (int k = 0; k < K; ++k) {
      const double e = std::exp(static_cast<double>(xr[k]) - mx);
      (*probs)[static_cast<size_t>(n) * K + k] = e;
      denom += e;
    }
    for (int k = 0; k < K; ++k) (*probs)[static_cast<size_t>(n) * K + k] /= denom;
    loss -= std::log((*probs)[static_cast<size_t>(n) * K + labels[static_cast<size_t>(n)]]);
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(loss / N));
  detail::check_finite(out, "cross_entropy");

  TensorT<T> logits_c = logits;
  std::vector<int> labels_c = labels;
  detail::record(out, {&logits}, [=](const std::vector<T>& gv) mutable {
    const T g = gv[0];
    T* gx = logits_c.grad();
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) {
        double d = (*probs)[static_cast<size_t>(n) * K + k];
        if (k == labels_c[static_cast<size_t>(n)]) d -= 1.0;
        gx[static_cast<size_t>(n) * K + k] += static_cast<T>(d / N) * g;
      }
  });
  return out;
}

/// Sum of all elements (scalar output).
template <typename T>
TensorT<T> sum(const TensorT<T>& input) {
  double acc = 0.0;
  for (const T& v : input.vec()) acc += static_cast<double>(v);
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));

  TensorT<T> input_c = input;
  detail::record(out, {&input}, [=](const std::vector<T>& gv) mutable {
    const T g = gv[0];
    T* gx = input_c.grad();
    const long n = input_c.numel();
    for (long i = 0; i < n; ++i) gx[i] += g;
  });
  return out;
}

}  // namespace crs

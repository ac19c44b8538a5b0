#pragma once

// 2-D convolution family and spatial rearrangements on NCHW tensors.
//
// conv2d, conv2d_backward_data and conv2d_backward_weight are bilinear and
// each one's derivative is expressed with the other two, so the trio is
// closed under repeated differentiation. Transposed convolution is
// conv2d_backward_data with an explicit output size.

#include <cstdint>
#include <vector>

#include "ganforge/ops.hpp"

namespace ganforge {

struct ConvGeometry {
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t pad = 1;

  std::int64_t output_extent(std::int64_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// "Same" padding: stride-1 convs keep the extent, stride-2 convs halve it.
inline ConvGeometry same_geometry(std::int64_t kernel, std::int64_t stride) {
  return ConvGeometry{kernel, stride, kernel / 2};
}

namespace detail {

inline bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

template <class T>
void im2col(const T* x, std::int64_t c, std::int64_t h, std::int64_t w, const ConvGeometry& g,
            std::int64_t ho, std::int64_t wo, T* cols) {
  const std::int64_t k = g.kernel;
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t kh = 0; kh < k; ++kh)
      for (std::int64_t kw = 0; kw < k; ++kw) {
        T* row = cols + ((ci * k + kh) * k + kw) * ho * wo;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + kh;
          T* out = row + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill_n(out, wo, T{0});
            continue;
          }
          const T* in = x + (ci * h + ih) * w;
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kw;
            out[ow] = (iw >= 0 && iw < w) ? in[iw] : T{0};
          }
        }
      }
}

template <class T>
void col2im(const T* cols, std::int64_t c, std::int64_t h, std::int64_t w, const ConvGeometry& g,
            std::int64_t ho, std::int64_t wo, T* x) {
  const std::int64_t k = g.kernel;
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t kh = 0; kh < k; ++kh)
      for (std::int64_t kw = 0; kw < k; ++kw) {
        const T* row = cols + ((ci * k + kh) * k + kw) * ho * wo;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= h) continue;
          T* out = x + (ci * h + ih) * w;
          const T* in = row + oh * wo;
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kw;
            if (iw >= 0 && iw < w) out[iw] += in[ow];
          }
        }
      }
}

inline void check_weight(const char* op, const Shape& w, std::int64_t kernel) {
  if (w.size() != 4 || w[2] != kernel || w[3] != kernel) {
    throw Error(std::string(op) + ": weight shape " + to_string(w) + " does not match kernel " +
                std::to_string(kernel));
  }
}

template <class T>
Tensor<T> conv2d_raw(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g) {
  check_weight("conv2d", w.shape(), g.kernel);
  if (x.rank() != 4 || x.dim(1) != w.dim(1)) {
    throw Error("conv2d: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  }
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), o = w.dim(0);
  const std::int64_t ho = g.output_extent(h), wo = g.output_extent(wd);
  const std::int64_t ckk = c * g.kernel * g.kernel, p = ho * wo;
  Tensor<T> y(Shape{n, o, ho, wo});
  std::vector<T> cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(ckk * p));
  ConstMatMap<T> wm(w.ptr(), o, ckk);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* xi = x.ptr() + i * c * h * wd;
    const T* cp = xi;
    if (!is_pointwise(g)) {
      im2col(xi, c, h, wd, g, ho, wo, cols.data());
      cp = cols.data();
    }
    MatMap<T>(y.ptr() + i * o * p, o, p).noalias() = wm * ConstMatMap<T>(cp, ckk, p);
  }
  return y;
}

template <class T>
Tensor<T> conv2d_backward_data_raw(const Tensor<T>& gy, const Tensor<T>& w, const ConvGeometry& g,
                                   std::int64_t h, std::int64_t wd) {
  check_weight("conv2d_backward_data", w.shape(), g.kernel);
  const std::int64_t n = gy.dim(0), o = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3), c = w.dim(1);
  if (o != w.dim(0) || g.output_extent(h) != ho || g.output_extent(wd) != wo) {
    throw Error("conv2d_backward_data: gradient " + to_string(gy.shape()) + " incompatible with weight " +
                to_string(w.shape()) + " and input extent " + std::to_string(h) + "x" + std::to_string(wd));
  }
  const std::int64_t ckk = c * g.kernel * g.kernel, p = ho * wo;
  Tensor<T> x(Shape{n, c, h, wd});
  std::vector<T> cols(static_cast<std::size_t>(ckk * p));
  ConstMatMap<T> wm(w.ptr(), o, ckk);
  for (std::int64_t i = 0; i < n; ++i) {
    T* xi = x.ptr() + i * c * h * wd;
    if (is_pointwise(g)) {
      MatMap<T>(xi, c, p).noalias() = wm.transpose() * ConstMatMap<T>(gy.ptr() + i * o * p, o, p);
      continue;
    }
    MatMap<T>(cols.data(), ckk, p).noalias() = wm.transpose() * ConstMatMap<T>(gy.ptr() + i * o * p, o, p);
    col2im(cols.data(), c, h, wd, g, ho, wo, xi);
  }
  return x;
}

template <class T>
Tensor<T> conv2d_backward_weight_raw(const Tensor<T>& x, const Tensor<T>& gy, const ConvGeometry& g) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t o = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3);
  if (gy.dim(0) != n || g.output_extent(h) != ho || g.output_extent(wd) != wo) {
    throw Error("conv2d_backward_weight: input " + to_string(x.shape()) + " incompatible with gradient " +
                to_string(gy.shape()));
  }
  const std::int64_t ckk = c * g.kernel * g.kernel, p = ho * wo;
  Tensor<T> gw(Shape{o, c, g.kernel, g.kernel});
  MatMap<T> gwm(gw.ptr(), o, ckk);
  std::vector<T> cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(ckk * p));
  for (std::int64_t i = 0; i < n; ++i) {
    const T* xi = x.ptr() + i * c * h * wd;
    const T* cp = xi;
    if (!is_pointwise(g)) {
      im2col(xi, c, h, wd, g, ho, wo, cols.data());
      cp = cols.data();
    }
    gwm.noalias() += ConstMatMap<T>(gy.ptr() + i * o * p, o, p) * ConstMatMap<T>(cp, ckk, p).transpose();
  }
  return gw;
}

}  // namespace detail

template <class T>
Var<T> conv2d_backward_data(const Var<T>& gy, const Var<T>& w, const ConvGeometry& g, std::int64_t h,
                            std::int64_t wd);
template <class T>
Var<T> conv2d_backward_weight(const Var<T>& x, const Var<T>& gy, const ConvGeometry& g);

/// Cross-correlation of x (N,C,H,W) with w (O,C,k,k).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const ConvGeometry& g) {
  const std::int64_t h = x.value().dim(2), wd = x.value().dim(3);
  return make_op<T>("conv2d", detail::conv2d_raw(x.value(), w.value(), g), {x, w},
                    [x, w, g, h, wd](const Var<T>&, const Var<T>& gy, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{
                          needs[0] ? conv2d_backward_data(gy, w, g, h, wd) : Var<T>(),
                          needs[1] ? conv2d_backward_weight(x, gy, g) : Var<T>()};
                    });
}

/// Adjoint of conv2d with respect to its input.
template <class T>
Var<T> conv2d_backward_data(const Var<T>& gy, const Var<T>& w, const ConvGeometry& g, std::int64_t h,
                            std::int64_t wd) {
  return make_op<T>("conv2d_backward_data", detail::conv2d_backward_data_raw(gy.value(), w.value(), g, h, wd),
                    {gy, w}, [gy, w, g](const Var<T>&, const Var<T>& gx, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? conv2d(gx, w, g) : Var<T>(),
                                                 needs[1] ? conv2d_backward_weight(gx, gy, g) : Var<T>()};
                    });
}

/// Adjoint of conv2d with respect to its weight.
template <class T>
Var<T> conv2d_backward_weight(const Var<T>& x, const Var<T>& gy, const ConvGeometry& g) {
  const std::int64_t h = x.value().dim(2), wd = x.value().dim(3);
  return make_op<T>("conv2d_backward_weight", detail::conv2d_backward_weight_raw(x.value(), gy.value(), g),
                    {x, gy}, [x, gy, g, h, wd](const Var<T>&, const Var<T>& gw, const std::vector<bool>& needs) {
                      return std::vector<Var<T>>{needs[0] ? conv2d_backward_data(gy, gw, g, h, wd) : Var<T>(),
                                                 needs[1] ? conv2d(x, gw, g) : Var<T>()};
                    });
}

/// Transposed convolution with weight (C_in, C_out, k, k), producing an
/// explicit (out_h, out_w) extent.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const ConvGeometry& g, std::int64_t out_h,
                        std::int64_t out_w) {
  return conv2d_backward_data(x, w, g, out_h, out_w);
}

namespace detail {

template <class T>
Tensor<T> avg_pool_raw(const Tensor<T>& x, std::int64_t f) {
  if (x.rank() != 4 || x.dim(2) % f || x.dim(3) % f) {
    throw Error("avg_pool: extent of " + to_string(x.shape()) + " not divisible by " + std::to_string(f));
  }
  const std::int64_t n = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), ho = h / f, wo = w / f;
  Tensor<T> y(Shape{x.dim(0), x.dim(1), ho, wo});
  const T inv = T{1} / static_cast<T>(f * f);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* src = x.ptr() + i * h * w;
    T* dst = y.ptr() + i * ho * wo;
    for (std::int64_t oh = 0; oh < ho; ++oh)
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        T s = 0;
        for (std::int64_t a = 0; a < f; ++a)
          for (std::int64_t b = 0; b < f; ++b) s += src[(oh * f + a) * w + ow * f + b];
        dst[oh * wo + ow] = s * inv;
      }
  }
  return y;
}

template <class T>
Tensor<T> upsample_raw(const Tensor<T>& x, std::int64_t f) {
  const std::int64_t n = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y(Shape{x.dim(0), x.dim(1), h * f, w * f});
  for (std::int64_t i = 0; i < n; ++i) {
    const T* src = x.ptr() + i * h * w;
    T* dst = y.ptr() + i * h * w * f * f;
    for (std::int64_t oh = 0; oh < h * f; ++oh)
      for (std::int64_t ow = 0; ow < w * f; ++ow) dst[oh * w * f + ow] = src[(oh / f) * w + ow / f];
  }
  return y;
}

}  // namespace detail

template <class T>
Var<T> upsample_nearest(const Var<T>& x, std::int64_t f);

/// Box-filter downsampling by an integer factor.
template <class T>
Var<T> avg_pool(const Var<T>& x, std::int64_t f) {
  return make_op<T>("avg_pool", detail::avg_pool_raw(x.value(), f), {x},
                    [f](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{scale(upsample_nearest(g, f), T{1} / static_cast<T>(f * f))};
                    });
}

template <class T>
Var<T> upsample_nearest(const Var<T>& x, std::int64_t f) {
  return make_op<T>("upsample_nearest", detail::upsample_raw(x.value(), f), {x},
                    [f](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{scale(avg_pool(g, f), static_cast<T>(f * f))};
                    });
}

namespace detail {

/// Channel c*r^2 + dy*r + dx of the packed tensor is output pixel offset
/// (dx, dy) inside each r x r block of output channel c.
template <class T>
Tensor<T> shuffle_raw(const Tensor<T>& x, std::int64_t r, bool pack_to_space) {
  if (x.rank() != 4) throw Error("pixel shuffle needs rank 4, got " + to_string(x.shape()));
  const std::int64_t n = x.dim(0);
  std::int64_t c, h, w;
  Shape out_shape;
  if (pack_to_space) {
    if (x.dim(1) % (r * r)) {
      throw Error("sub_pixel_upsample: channels of " + to_string(x.shape()) + " not divisible by " +
                  std::to_string(r * r));
    }
    c = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
    out_shape = {n, c, h * r, w * r};
  } else {
    if (x.dim(2) % r || x.dim(3) % r) throw Error("pixel_unshuffle: extent not divisible by factor");
    c = x.dim(1), h = x.dim(2) / r, w = x.dim(3) / r;
    out_shape = {n, c * r * r, h, w};
  }
  Tensor<T> y(out_shape);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t dy = 0; dy < r; ++dy)
        for (std::int64_t dx = 0; dx < r; ++dx)
          for (std::int64_t hh = 0; hh < h; ++hh)
            for (std::int64_t ww = 0; ww < w; ++ww) {
              const std::int64_t packed = ((i * c * r * r + ci * r * r + dy * r + dx) * h + hh) * w + ww;
              const std::int64_t spatial = ((i * c + ci) * h * r + hh * r + dy) * w * r + ww * r + dx;
              if (pack_to_space) {
                y[spatial] = x[packed];
              } else {
                y[packed] = x[spatial];
              }
            }
  return y;
}

}  // namespace detail

template <class T>
Var<T> pixel_unshuffle(const Var<T>& x, std::int64_t r);

/// (N, C*r^2, H, W) -> (N, C, H*r, W*r).
template <class T>
Var<T> pixel_shuffle(const Var<T>& x, std::int64_t r) {
  return make_op<T>("pixel_shuffle", detail::shuffle_raw(x.value(), r, true), {x},
                    [r](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{pixel_unshuffle(g, r)};
                    });
}

/// Inverse of pixel_shuffle.
template <class T>
Var<T> pixel_unshuffle(const Var<T>& x, std::int64_t r) {
  return make_op<T>("pixel_unshuffle", detail::shuffle_raw(x.value(), r, false), {x},
                    [r](const Var<T>&, const Var<T>& g, const std::vector<bool>&) {
                      return std::vector<Var<T>>{pixel_shuffle(g, r)};
                    });
}

}  // namespace ganforge
